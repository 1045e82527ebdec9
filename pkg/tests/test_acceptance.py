"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 7 and 8 share one full coverage study (about an hour on one core);
criterion 9 runs the synthetic holdout experiment (several minutes).
"""

import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st
from scipy import integrate

from stormlevels.cli import main as cli_main
from stormlevels.dependence import (ExtremalCurve, compute_weights, ecdf_transform,
                                    pairwise_theta, smooth_curve, weights_from_theta)
from stormlevels.evaluate import (HoldoutConfig, StudyConfig, compare_models, coverage_study,
                                  holdout_experiment, truth_centered_hyperpriors)
from stormlevels.gev import gev_cdf, gev_logpdf, gev_logpdf_grad, gev_quantile
from stormlevels.model import PROCESSES, FitData, ModelSpec, initial_state
from stormlevels.pcprior import XI_HIGH, XI_LOW, pc_distance, pc_logprior
from stormlevels.sampler import SamplerConfig, run_chain
from stormlevels.simulate import (DEPENDENCE, GeneratorConfig, assemble_dataset,
                                  br_extremal_coefficient, sample_br_frechet, sample_sites)
from stormlevels.spatial import CovarianceSpec, GpField, cov_matrix, krige

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


def report(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {title}: {'PASS' if ok else 'FAIL'} | {detail}")
    assert ok, detail


# ------------------------------------------------------------------ 1. GEV

def _density_mass(params):
    mu, ls, xi = params
    s = np.exp(ls)
    lo = mu - s / xi if xi > 1e-8 else -np.inf
    hi = mu - s / xi if xi < -1e-8 else np.inf
    a = max(lo, mu - 20 * s)
    mid = min(hi, mu + 50 * s)
    f = lambda v: np.exp(gev_logpdf(v, params))
    kw = dict(limit=500, epsabs=1e-13, epsrel=1e-12)
    total = integrate.quad(f, a, mid, **kw)[0]
    if hi > mid:
        total += integrate.quad(f, mid, hi, **kw)[0]
    return total


def test_criterion_1_gev(capsys):
    mus = np.linspace(-10.0, 50.0, 5)
    lss = np.linspace(-1.0, 3.0, 5)
    xis = np.array([-0.4, -0.1, 0.0, 0.15, 0.45])
    p = np.linspace(0.001, 0.999, 50)
    rt = 0.0
    for mu in mus:
        for ls in lss:
            for xi in xis:
                y = gev_quantile(p, (mu, ls, xi))
                rt = max(rt, float(np.max(np.abs(gev_cdf(y, (mu, ls, xi)) - p))))

    grad_err = 0.0
    h = 1e-6
    for xi in xis:
        params = np.array([2.0, 0.3, xi])
        y = gev_quantile(np.linspace(0.05, 0.95, 9), tuple(params))
        g = gev_logpdf_grad(y, tuple(params))
        fd = np.empty_like(g)
        for c in range(3):
            up, dn = params.copy(), params.copy()
            step = h if c < 2 or abs(xi) > 1e-3 else 1e-4
            up[c] += step
            dn[c] -= step
            fd[:, c] = (gev_logpdf(y, tuple(up)) - gev_logpdf(y, tuple(dn))) / (2 * step)
        grad_err = max(grad_err, float(np.max(np.linalg.norm(g - fd, axis=1)
                                              / np.linalg.norm(fd, axis=1))))

    mass_err = 0.0
    for xi in (-0.4, -1e-7, -1e-9, 0.0, 1e-9, 1e-7, 0.2, 0.45):
        mass_err = max(mass_err, abs(_density_mass((1.0, 0.5, xi)) - 1.0))
    yy = np.linspace(-2.0, 10.0, 61)
    cont = max(float(np.max(np.abs(gev_logpdf(yy, (0.0, 0.0, x)) - gev_logpdf(yy, (0.0, 0.0, 0.0)))))
               for x in (1e-9, -1e-9, 1e-7, -1e-7))

    ok = rt < 1e-10 and grad_err < 1e-5 and mass_err < 1e-6 and cont < 1e-5
    report(capsys, 1, "GEV round trip, gradient, normalization", ok,
           f"round trip {rt:.2e} (<1e-10), gradient rel {grad_err:.2e} (<1e-5), "
           f"mass {mass_err:.2e} (<1e-6), xi->0 logpdf gap {cont:.2e}")


# --------------------------------------------------------------- 2. weights

def test_criterion_2_weights(capsys):
    exact = True
    for n in (2, 3, 10, 50, 200):
        sites = np.random.default_rng(n).uniform(-10, 10, (n, 2))
        exact &= bool(np.array_equal(compute_weights(2.0, sites), np.ones(n)))
        exact &= bool(np.array_equal(compute_weights(1.0, sites), np.full(n, 1.0 / n)))
        exact &= bool(np.array_equal(weights_from_theta(np.full((n, n), 2.0)), np.ones(n)))
        exact &= bool(np.array_equal(weights_from_theta(np.full((n, n), 1.0)),
                                     np.full(n, 1.0 / n)))

    seen, bad = [], []

    @settings(max_examples=10_000, deadline=None, database=None,
              suppress_health_check=list(HealthCheck))
    @given(n=st.integers(2, 60), seed=st.integers(0, 2 ** 32 - 1),
           shape=st.sampled_from(["uniform", "near_one", "near_two", "extremes", "curve"]))
    def check(n, seed, shape):
        rng = np.random.default_rng(seed)
        if shape == "curve":
            d = np.sort(rng.uniform(0, 30, 6))
            curve = ExtremalCurve(d, rng.uniform(1, 2, 6), float(rng.uniform(0.5, 5)))
            w = compute_weights(curve, rng.uniform(-10, 10, (n, 2)))
        else:
            t = {"uniform": lambda: rng.uniform(1, 2, (n, n)),
                 "near_one": lambda: 1 + rng.uniform(0, 1e-12, (n, n)),
                 "near_two": lambda: 2 - rng.uniform(0, 1e-12, (n, n)),
                 "extremes": lambda: rng.choice([1.0, 2.0], (n, n))}[shape]()
            w = weights_from_theta(np.triu(t, 1) + np.triu(t, 1).T + np.eye(n))
        seen.append(n)
        if not (np.all(w >= 1.0 / n) and np.all(w <= 1.0)):
            bad.append((n, seed, shape))

    check()
    ok = exact and not bad and len(seen) >= 10_000
    report(capsys, 2, "weights limits and bounds", ok,
           f"exact limits {exact}, {len(seen)} generated cases, {len(bad)} out of [1/N, 1]")


# ---------------------------------------------------- 3. extremal coefficient

def test_criterion_3_extremal_oracle(capsys):
    lam, alpha = DEPENDENCE["moderate"]
    rng = np.random.default_rng(2024)
    sites = sample_sites(50, rng)
    z = sample_br_frechet(sites, lam, alpha, 10000, 2024)
    pairs = pairwise_theta(ecdf_transform(z), sites)
    d = np.percentile(pairs.distance, [25, 37.5, 50, 62.5, 75])
    err = np.abs(smooth_curve(pairs)(d) - br_extremal_coefficient(d, lam, alpha))
    report(capsys, 3, "smoothed theta vs 2 Phi(sqrt(gamma)/2)", bool(np.all(err <= 0.05)),
           f"abs errors {np.round(err, 4).tolist()} at d={np.round(d, 2).tolist()} (<=0.05)")


# ------------------------------------------------------- 4. conjugate oracle

def test_criterion_4_conjugate_oracle(capsys):
    ds = assemble_dataset(GeneratorConfig(n_sites=30, n_years=50, dependence="moderate",
                                          seed=404))
    data = FitData.from_arrays(ds.y, ds.sites)
    spec = ModelSpec.named("unweighted", hyperpriors=truth_centered_hyperpriors())
    init = initial_state(data, spec)
    cfg = SamplerConfig(iterations=10000, burn_in=0, thin=1, seed=44, update_eta=False,
                        update_hyper=False, update_lambda=False, update_weights=False)
    out = run_chain(data, spec, cfg, init=init)
    n = out.n_draws
    worst_z, worst_cov = 0.0, 0.0
    for k, proc in enumerate(PROCESSES):
        X = data.designs[proc]
        q = np.linalg.inv(cov_matrix(init.cov[k], data.sites))
        prec = X.T @ q @ X + np.eye(X.shape[1]) / spec.beta_prior_var
        cov = np.linalg.inv(prec)
        mean = cov @ (X.T @ q @ init.eta[:, k])
        b = out.beta[k]
        zscore = np.abs(b.mean(axis=0) - mean) / np.sqrt(np.diag(cov) / n)
        scale = np.sqrt(np.outer(np.diag(cov), np.diag(cov)))
        cov_err = np.abs(np.atleast_2d(np.cov(b.T)) - cov) / scale
        worst_z = max(worst_z, float(zscore.max()))
        worst_cov = max(worst_cov, float(cov_err.max()))
    ok = worst_z <= 3.0 and worst_cov <= 0.10
    report(capsys, 4, "beta draws vs GLS posterior", ok,
           f"max |mean error| {worst_z:.2f} MC SE (<=3), max covariance error "
           f"{worst_cov:.3f} of sd_i sd_j (<=0.10), {n} draws")


# ---------------------------------------------------------------- 5. PC prior

def test_criterion_5_pc_prior(capsys):
    d0 = pc_distance(0.0)
    masses = {}
    for lam in (0.5, 1.0, 2.0):
        f = lambda x: np.exp(pc_logprior(x, lam))
        a = integrate.quad(f, XI_LOW, 0.0, limit=200)[0]
        b = integrate.quad(f, 0.0, XI_HIGH, limit=400, points=[0.9, 0.99])[0]
        masses[lam] = a + b
    ok = d0 == 0.0 and all(abs(m - 1) <= 1e-3 for m in masses.values())
    report(capsys, 5, "PC prior distance and normalization", ok,
           f"d(0)={d0}, masses {[round(m, 6) for m in masses.values()]} (1 +/- 1e-3)")


# ----------------------------------------------------------------- 6. kriging

def test_criterion_6_kriging(capsys):
    rng = np.random.default_rng(6)
    sites = rng.uniform(-10, 10, (25, 2))
    X = np.column_stack([np.ones(25), sites])
    beta = np.array([26.0, 0.5, 0.0])
    worst = 0.0
    for spec in (CovarianceSpec("powered_exponential", 4.0, 20.0, 1.0),
                 CovarianceSpec("powered_exponential", 0.4, 5.0, 1.5),
                 CovarianceSpec("matern", 2.0, 8.0, 1.5)):
        vals = X @ beta + np.linalg.cholesky(cov_matrix(spec, sites)) @ rng.standard_normal(25)
        gp = GpField(sites, vals, X, beta)
        m, v = krige(gp, spec, sites, X, marginal=True)
        worst = max(worst, float(np.max(np.abs(m - vals))), float(np.max(v)))
    spec = CovarianceSpec("powered_exponential", 4.0, 20.0, 1.0)
    new = rng.uniform(-10, 10, (7, 2))
    X0 = np.column_stack([np.ones(7), new])
    empty = GpField(np.empty((0, 2)), np.empty(0), np.empty((0, 3)), beta)
    m0, c0 = krige(empty, spec, new, X0)
    prior_exact = bool(np.array_equal(m0, X0 @ beta)
                       and np.array_equal(c0, cov_matrix(spec, new, new)))
    ok = worst <= 1e-6 and prior_exact
    report(capsys, 6, "kriging interpolation and empty conditioning", ok,
           f"max error at observed sites {worst:.2e} (<=1e-6), empty set gives prior exactly: "
           f"{prior_exact}")


# ------------------------------------------------------ 7 and 8. coverage/MSE

@pytest.fixture(scope="module")
def study():
    cfg = StudyConfig(n_sites=30, n_years=50, replicates=50,
                      dependences=("independent", "weak", "moderate", "strong"),
                      models=("weighted", "unweighted", "pc_prior"),
                      sampler=SamplerConfig(iterations=20000))
    res = coverage_study(cfg)
    return res, compare_models(res.table).set_index("dependence")


def test_criterion_7_coverage(capsys, study):
    res, c = study
    with capsys.disabled():
        print("\n" + res.table[["model", "dependence", "n", "failures", "coverage",
                                "coverage_se", "mse", "mean_hpd_width"]].to_string(index=False))
    not_worse = bool((c.coverage_weighted >= c.coverage_unweighted - c.pooled_se).all())
    in_band = bool(c.coverage_weighted.between(0.76, 0.98).all())
    cells = ["moderate", "strong"]
    closer = bool((c.loc[cells, "distance_weighted"] < c.loc[cells, "distance_unweighted"]).all())
    detail = "; ".join(f"{d}: w {r.coverage_weighted:.3f} u {r.coverage_unweighted:.3f} "
                       f"se {r.pooled_se:.3f}" for d, r in c.iterrows())
    report(capsys, 7, "coverage of 95% HPD intervals for q(0.99)", not_worse and in_band and closer,
           f"{detail}; not worse {not_worse}, in [0.76,0.98] {in_band}, closer to 0.95 in "
           f"moderate/strong {closer}")


def test_criterion_8_mse(capsys, study):
    _, c = study
    strong = float(c.loc["strong", "mse_ratio"])
    near = {d: float(c.loc[d, "mse_ratio"]) for d in ("independent", "weak")}
    ok = strong <= 1.25 and all(abs(r - 1) <= 0.10 for r in near.values())
    report(capsys, 8, "MSE of q(0.99), weighted / unweighted", ok,
           f"strong {strong:.3f} (<=1.25), independent {near['independent']:.3f}, "
           f"weak {near['weak']:.3f} (within 10%)")


# ----------------------------------------------------------------- 9. holdout

def test_criterion_9_holdout(capsys):
    df = holdout_experiment(HoldoutConfig(replicates=10, dependence="moderate",
                                          holdout_fraction=0.1))
    wins = df.weighted >= df.unweighted
    frac = float(wins.mean())
    report(capsys, 9, "holdout log-score, weighted vs unweighted", frac > 0.5,
           f"weighted >= unweighted at {int(wins.sum())}/{len(df)} sites ({frac:.2f} > 0.50)")


# --------------------------------------------------------- 10. reproducibility

def _tree(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and not p.name.endswith("_timing.json")}


def test_criterion_10_reproducibility(capsys, tmp_path):
    sim = tmp_path / "sim"
    assert cli_main(["simulate", "--n-sites", "15", "--n-years", "40", "--seed", "10",
                     "--out", str(sim), "--quiet"]) == 0
    data = ["--stations", str(sim / "stations.csv"), "--observations",
            str(sim / "observations.csv")]
    commands = {
        "simulate": ["simulate", "--n-sites", "15", "--n-years", "40", "--seed", "10"],
        "fit": ["fit", *data, "--model", "weighted", "--weights", "fixed", "--chains", "2",
                "--iters", "2000", "--burn-in", "500", "--thin", "5", "--seed", "7"],
        "study": ["study", "--replicates", "2", "--n-sites", "8", "--n-years", "20",
                  "--iters", "600", "--burn-in", "100", "--thin", "5", "--seed", "3"],
    }
    same = {}
    for name, argv in commands.items():
        trees = []
        for run, threads in enumerate(("1", "1", "8")):
            out = tmp_path / f"{name}_{run}"
            assert cli_main([*argv, "--threads", threads, "--out", str(out), "--quiet"]) == 0
            trees.append(_tree(out))
        same[name] = bool(trees[0] and trees[0] == trees[1] == trees[2])
    report(capsys, 10, "bit-identical outputs (same seed; threads 1, 1, 8)", all(same.values()),
           ", ".join(f"{k} {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
