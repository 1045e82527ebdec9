import math

import numpy as np
import pytest
from scipy import special

from stormlevels import _kernels as K
from stormlevels.gev import gev_logpdf
from stormlevels.model import FitData, HyperPrior, ModelSpec, initial_state, log_posterior
from stormlevels.sampler import _Chain
from stormlevels.simulate import GeneratorConfig, assemble_dataset
from stormlevels.spatial import CovarianceSpec, cov_matrix, distances


@pytest.fixture(scope="module")
def small():
    ds = assemble_dataset(GeneratorConfig(n_sites=8, n_years=25, dependence="weak", seed=11))
    y = ds.y.copy()
    y[3, 2] = np.nan
    return FitData.from_arrays(y, ds.sites)


def _priors():
    return {"mu": HyperPrior.centered(4.0, 20.0), "log_sigma": HyperPrior.centered(0.4, 5.0),
            "xi": HyperPrior.centered(0.0012, 10.0)}


@pytest.mark.parametrize("nu", [0.05, 0.3, 0.5, 1.0, 1.5, 2.7, 6.2])
def test_bessel_k_matches_scipy(nu):
    for x in np.geomspace(1e-4, 500, 60):
        assert K.bessel_k(nu, x) == pytest.approx(special.kv(nu, x), rel=1e-11)


def test_bessel_half_order_closed_form():
    for x in (0.1, 1.0, 7.0):
        assert K.bessel_k(0.5, x) == pytest.approx(math.sqrt(math.pi / (2 * x)) * math.exp(-x),
                                                   rel=1e-13)


def test_kernel_covariance_matches_numpy(small):
    D = distances(small.sites)
    for spec in (CovarianceSpec("powered_exponential", 2.0, 3.0, 1.3),
                 CovarianceSpec.matern(0.5, 4.0, 1.7)):
        C = np.empty_like(D)
        code = K.POWEXP if spec.kind == "powered_exponential" else K.MATERN
        K.build_cov(D, code, spec.sill, spec.range, spec.smoothness, spec.jitter, C)
        np.testing.assert_allclose(C, cov_matrix(spec, small.sites), rtol=1e-10, atol=1e-14)


def test_kernel_logpdf_matches_numpy():
    rng = np.random.default_rng(0)
    for _ in range(200):
        mu, ls, xi = rng.normal(0, 2), rng.normal(0, 0.5), rng.uniform(-0.6, 0.8)
        y = rng.normal(mu, 3)
        a = K.gev_logpdf1(y, mu, ls, xi)
        b = float(gev_logpdf(y, (mu, ls, xi)))
        if np.isfinite(b):
            assert a == pytest.approx(b, rel=1e-12, abs=1e-12)
        else:
            assert a == -np.inf


@pytest.mark.parametrize("name", ["weighted", "unweighted", "pc_prior"])
def test_site_delta_equals_log_posterior_difference(small, name):
    spec = ModelSpec.named(name, hyperpriors=_priors())
    w = np.linspace(0.3, 1.0, small.n_sites) if spec.uses_weights else None
    state = initial_state(small, spec, w)
    state.pc_lambda = 1.7
    ch = _Chain(small, spec, state)
    rng = np.random.default_rng(5)
    lp0 = log_posterior(state, small, spec)
    checked = 0
    for j in range(small.n_sites):
        prop = state.eta[j] + rng.normal(0, [0.3, 0.05, 0.03])
        tab = ch.pc_args
        delta, _ = K.site_delta(j, prop, ch.y, ch.eta, ch.resid, ch.Q, ch.w, ch.ll, ch.pc,
                                ch.lam[0], *tab, ch.means)
        new = state.copy()
        new.eta[j] = prop
        lp1 = log_posterior(new, small, spec)
        if np.isfinite(lp1):
            assert delta == pytest.approx(lp1 - lp0, abs=1e-6 * (1 + abs(lp1 - lp0)))
            checked += 1
        else:
            assert delta == -np.inf
    assert checked >= 4


def test_hyper_target_equals_log_posterior_difference(small):
    spec = ModelSpec.named("unweighted", hyperpriors=_priors())
    state = initial_state(small, spec)
    ch = _Chain(small, spec, state)
    n = small.n_sites
    C, L = np.empty((n, n)), np.empty((n, n))
    lp0 = log_posterior(state, small, spec)
    for k in range(3):
        cur = K.hyper_target(ch.hyp[k], ch.kind[k], ch.resid[k], ch.D, ch.jitter, ch.hp[k],
                             ch.sampled[k], C, L)
        for m in range(2):
            trial = ch.hyp[k].copy()
            trial[m] *= 1.3
            new = K.hyper_target(trial, ch.kind[k], ch.resid[k], ch.D, ch.jitter, ch.hp[k],
                                 ch.sampled[k], C, L)
            s2 = state.copy()
            s2.cov[k] = s2.cov[k].with_params(sill=trial[0], range=trial[1])
            lp1 = log_posterior(s2, small, spec)
            expected = lp1 - lp0 + math.log(1.3)
            assert new - cur == pytest.approx(expected, abs=1e-7 * (1 + abs(expected)))


def test_beta_draw_is_exact_conditional(small):
    spec = ModelSpec.named("unweighted", hyperpriors=_priors(), beta_prior_var=100.0)
    state = initial_state(small, spec)
    ch = _Chain(small, spec, state)
    k = 0
    X = small.designs["mu"]
    Q = ch.Q[k]
    P = X.T @ Q @ X + np.eye(X.shape[1]) / 100.0
    mean = np.linalg.solve(P, X.T @ Q @ ch.eta[:, k])
    z = np.array([0.3, -1.2, 0.7])
    K.draw_beta(k, ch.X, ch.p, ch.beta, ch.eta, ch.Q, ch.beta_prec, z, ch.resid, ch.means)
    LP = np.linalg.cholesky(P)
    expected = mean + np.linalg.solve(LP.T, z)
    np.testing.assert_allclose(ch.beta[k, :3], expected, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(ch.means[k], X @ expected, rtol=1e-9, atol=1e-9)
