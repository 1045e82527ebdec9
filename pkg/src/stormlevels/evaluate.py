"""Evaluation protocols: simulation coverage/MSE study, holdout log-scores, return-level maps."""

from __future__ import annotations

import dataclasses
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits

from .diagnostics import hpd_interval
from .gev import gev_logpdf, gev_quantile
from .model import PROCESSES, FitData, HyperPrior, ModelSpec, build_design
from .sampler import ChainOutput, SamplerConfig, run_chain
from .simulate import FIELD_COV, GeneratorConfig, assemble_dataset
from .spatial import CovarianceSpec, GpField, krige

LOG_SCORE_FLOOR = -1e9
MAX_FAIL_FRACTION = 0.10
STUDY_MODELS = ("weighted", "unweighted", "pc_prior")
DEPENDENCE_LEVELS = ("independent", "weak", "moderate", "strong")


def truth_centered_hyperpriors() -> dict:
    """Hyperpriors with means at the generating sills and ranges."""
    return {k: HyperPrior.centered(FIELD_COV[k].sill, FIELD_COV[k].range) for k in PROCESSES}


def derive_seed(*key: int) -> int:
    """Stable 63-bit seed from an integer key."""
    return int(np.random.SeedSequence(list(key)).generate_state(1, np.uint64)[0] >> np.uint64(1))


# -------------------------------------------------------------------- coverage

@dataclass(frozen=True)
class StudyConfig:
    dependences: tuple = DEPENDENCE_LEVELS
    models: tuple = STUDY_MODELS
    n_sites: int = 30
    n_years: int = 50
    replicates: int = 50
    seed: int = 20190101
    p: float = 0.99
    prob: float = 0.95
    priors: str = "truth"            # or "variogram"
    sampler: SamplerConfig = SamplerConfig()

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("a study needs at least 2 replicates")
        if self.priors not in ("truth", "variogram"):
            raise ValueError("priors must be 'truth' or 'variogram'")


@dataclass
class StudyResult:
    table: pd.DataFrame          # one row per (model, dependence)
    records: pd.DataFrame        # one row per (model, dependence, replicate, site)
    failures: pd.DataFrame
    config: dict = field(default_factory=dict)
    seconds: list = field(default_factory=list)   # per job; kept out of the records

    def cell(self, model: str, dependence: str) -> pd.Series:
        t = self.table
        return t[(t.model == model) & (t.dependence == dependence)].iloc[0]


def dataset_for(cfg: StudyConfig, cell: int, rep: int):
    gen = GeneratorConfig(n_sites=cfg.n_sites, n_years=cfg.n_years,
                          dependence=cfg.dependences[cell], seed=derive_seed(cfg.seed, cell, rep))
    return assemble_dataset(gen)


def interval_records(draws, truth, prob: float = 0.95) -> pd.DataFrame:
    """Per-site HPD coverage and error of the posterior mean; ``draws`` is S x N."""
    lo, hi = hpd_interval(draws, prob)
    mean = np.mean(draws, axis=0)
    return pd.DataFrame({"site": np.arange(len(truth)), "truth": truth, "post_mean": mean,
                         "hpd_lo": lo, "hpd_hi": hi,
                         "covered": (lo <= truth) & (truth <= hi), "error": mean - truth})


def _study_job(args):
    cfg, cell, rep, model = args
    ds = dataset_for(cfg, cell, rep)
    data = FitData.from_arrays(ds.y, ds.sites, site_ids=ds.site_ids)
    kw = {"hyperpriors": truth_centered_hyperpriors()} if cfg.priors == "truth" else {}
    spec = ModelSpec.named(model, **kw)
    sampler = dataclasses.replace(cfg.sampler, seed=derive_seed(cfg.seed, cell, rep, 7))
    t0 = time.perf_counter()
    try:
        with threadpool_limits(1):
            out = run_chain(data, spec, sampler)
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    rec = interval_records(out.return_levels(cfg.p), ds.return_levels(cfg.p), cfg.prob)
    rec.insert(0, "replicate", rep)
    rec.insert(0, "dependence", cfg.dependences[cell])
    rec.insert(0, "model", model)
    rec["accept_site"] = out.acceptance["site_mean"]
    return rec, time.perf_counter() - t0


def run_jobs(fn, jobs, threads: int = 1):
    """Map ``fn`` over ``jobs`` in order, optionally in a spawn-based process pool."""
    if threads > 1 and len(jobs) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=threads, mp_context=ctx) as ex:
            return list(ex.map(fn, jobs, chunksize=1))
    return [fn(j) for j in jobs]


def summarize_records(records: pd.DataFrame, failures: pd.DataFrame, replicates: int) -> pd.DataFrame:
    rows = []
    keys = records[["model", "dependence"]].drop_duplicates() if len(records) else []
    for _, (model, dep) in (keys.iterrows() if len(records) else []):
        r = records[(records.model == model) & (records.dependence == dep)]
        n_fail = int(((failures.model == model) & (failures.dependence == dep)).sum()) \
            if len(failures) else 0
        n = len(r)
        c = float(r.covered.mean())
        e = r.error.to_numpy()
        aborted = n_fail > MAX_FAIL_FRACTION * replicates
        rows.append({"model": model, "dependence": dep, "n_sites": int(r.site.max() + 1),
                     "replicates": int(r.replicate.nunique()), "failures": n_fail,
                     "n": n, "coverage": np.nan if aborted else c,
                     "coverage_se": np.sqrt(c * (1 - c) / n),
                     "mse": float(np.mean(e ** 2)), "bias2": float(np.mean(e) ** 2),
                     "variance": float(np.var(e)), "mean_hpd_width": float(np.mean(r.hpd_hi - r.hpd_lo)),
                     "status": "aborted" if aborted else "ok"})
    return pd.DataFrame(rows)


def coverage_study(cfg: StudyConfig, threads: int = 1) -> StudyResult:
    """Simulate, fit every model, and pool HPD coverage of the return level over sites and replicates.

    Each (cell, replicate) dataset and chain seed depends only on ``cfg.seed``
    and the indices, so results do not depend on ``threads`` or job order.
    """
    jobs = [(cfg, c, r, m) for c in range(len(cfg.dependences)) for r in range(cfg.replicates)
            for m in cfg.models]
    results = run_jobs(_study_job, jobs, threads)
    recs, fails, secs = [], [], []
    for (_, c, r, m), (rec, info) in zip(jobs, results):
        if rec is not None:
            recs.append(rec)
            secs.append(info)
        else:
            fails.append({"model": m, "dependence": cfg.dependences[c], "replicate": r,
                          "error": info})
    records = pd.concat(recs, ignore_index=True) if recs else pd.DataFrame(
        columns=["model", "dependence", "replicate", "site", "covered", "error"])
    failures = pd.DataFrame(fails, columns=["model", "dependence", "replicate", "error"])
    table = summarize_records(records, failures, cfg.replicates)
    return StudyResult(table, records, failures, {"study": _config_dict(cfg)}, secs)


def compare_models(table: pd.DataFrame, model: str = "weighted", baseline: str = "unweighted",
                   nominal: float = 0.95) -> pd.DataFrame:
    """Per dependence cell: coverage gap with its pooled-proportion SE and MSE ratio."""
    rows = []
    for dep in table.dependence.unique():
        a = table[(table.model == model) & (table.dependence == dep)]
        b = table[(table.model == baseline) & (table.dependence == dep)]
        if a.empty or b.empty:
            continue
        a, b = a.iloc[0], b.iloc[0]
        pooled = (a.coverage * a.n + b.coverage * b.n) / (a.n + b.n)
        rows.append({"dependence": dep, f"coverage_{model}": a.coverage,
                     f"coverage_{baseline}": b.coverage,
                     "pooled_se": float(np.sqrt(pooled * (1 - pooled) * (1 / a.n + 1 / b.n))),
                     f"distance_{model}": abs(a.coverage - nominal),
                     f"distance_{baseline}": abs(b.coverage - nominal),
                     f"mse_{model}": a.mse, f"mse_{baseline}": b.mse,
                     "mse_ratio": a.mse / b.mse})
    return pd.DataFrame(rows)


def _config_dict(cfg: StudyConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["dependences"] = list(cfg.dependences)
    d["models"] = list(cfg.models)
    return d


# ------------------------------------------------------------------ prediction

def krige_draws(out: ChainOutput, sites, designs: dict, new_sites, new_designs: dict,
                rng: np.random.Generator, draws=None) -> np.ndarray:
    """S x M x 3 draws of (mu, log_sigma, xi) at new sites from the per-draw kriging distributions."""
    new_sites = np.atleast_2d(np.asarray(new_sites, float))
    idx = np.arange(out.n_draws) if draws is None else np.asarray(draws)
    res = np.empty((idx.size, new_sites.shape[0], 3))
    for a, s in enumerate(idx):
        for k, proc in enumerate(PROCESSES):
            spec = CovarianceSpec(out.cov_kinds[k], *out.hyper[s, k])
            gp = GpField(sites, out.eta[s, :, k], designs[proc], out.beta[k][s])
            mean, var = krige(gp, spec, new_sites, new_designs[proc], marginal=True)
            res[a, :, k] = mean + np.sqrt(var) * rng.standard_normal(mean.size)
    return res


@dataclass
class HoldoutScore:
    site_id: str
    x: float
    y: float
    log_score: float
    n_degenerate: int
    n_draws: int


def holdout_logscore(y_holdout, holdout_sites, holdout_designs: dict, out: ChainOutput,
                     train: FitData, seed: int = 0, holdout_ids=None) -> list:
    """Posterior mean over draws of the summed GEV log-likelihood at each held-out site.

    Draws whose kriged margins put an observation outside the support score
    ``LOG_SCORE_FLOOR`` and are counted as degenerate.
    """
    y = np.atleast_2d(np.asarray(y_holdout, float))
    sites = np.atleast_2d(np.asarray(holdout_sites, float))
    for proc in PROCESSES:
        if proc not in holdout_designs:
            raise ValueError(f"missing covariates for {proc} at holdout sites")
    rng = np.random.default_rng(seed)
    eta = krige_draws(out, train.sites, train.designs, sites, holdout_designs, rng)
    scores = []
    ids = holdout_ids or [f"H{j:03d}" for j in range(sites.shape[0])]
    for j in range(sites.shape[0]):
        yj = y[:, j]
        yj = yj[~np.isnan(yj)]
        mu, ls, xi = (eta[:, j, c][:, None] for c in range(3))
        with np.errstate(all="ignore"):
            lp = gev_logpdf(yj[None, :], (mu, ls, xi)).sum(axis=1)
        bad = ~np.isfinite(lp)
        lp = np.where(bad, LOG_SCORE_FLOOR, lp)
        scores.append(HoldoutScore(ids[j], float(sites[j, 0]), float(sites[j, 1]),
                                   float(lp.mean()), int(bad.sum()), int(lp.size)))
    return scores


@dataclass(frozen=True)
class HoldoutConfig:
    replicates: int = 10
    n_sites: int = 50
    n_years: int = 50
    dependence: str = "moderate"
    holdout_fraction: float = 0.1
    models: tuple = ("weighted", "unweighted")
    seed: int = 20190202
    priors: str = "truth"
    sampler: SamplerConfig = SamplerConfig()


def _holdout_job(args):
    cfg, rep, model = args
    gen = GeneratorConfig(n_sites=cfg.n_sites, n_years=cfg.n_years, dependence=cfg.dependence,
                          seed=derive_seed(cfg.seed, rep))
    ds = assemble_dataset(gen)
    n_hold = max(1, int(round(cfg.holdout_fraction * cfg.n_sites)))
    perm = np.random.default_rng(derive_seed(cfg.seed, rep, 1)).permutation(cfg.n_sites)
    hold, keep = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
    train = FitData.from_arrays(ds.y[:, keep], ds.sites[keep],
                                site_ids=[ds.site_ids[k] for k in keep])
    kw = {"hyperpriors": truth_centered_hyperpriors()} if cfg.priors == "truth" else {}
    spec = ModelSpec.named(model, **kw)
    sampler = dataclasses.replace(cfg.sampler, seed=derive_seed(cfg.seed, rep, 2))
    with threadpool_limits(1):
        out = run_chain(train, spec, sampler)
        hd = {k: build_design(ds.sites[hold], None, train.terms[k]) for k in PROCESSES}
        scores = holdout_logscore(ds.y[:, hold], ds.sites[hold], hd, out, train,
                                  seed=derive_seed(cfg.seed, rep, 3),
                                  holdout_ids=[ds.site_ids[k] for k in hold])
    return pd.DataFrame([dict(model=model, replicate=rep, **dataclasses.asdict(s))
                         for s in scores])


def holdout_experiment(cfg: HoldoutConfig, threads: int = 1) -> pd.DataFrame:
    """Log-scores per (replicate, holdout site) with one column per model.

    Every model sees the same training sites, holdout sites, priors and sampler settings.
    """
    jobs = [(cfg, r, m) for r in range(cfg.replicates) for m in cfg.models]
    long = pd.concat(run_jobs(_holdout_job, jobs, threads), ignore_index=True)
    wide = long.pivot_table(index=["replicate", "site_id", "x", "y"], columns="model",
                            values="log_score").reset_index()
    deg = long.pivot_table(index=["replicate", "site_id"], columns="model",
                           values="n_degenerate").add_prefix("degenerate_").reset_index()
    return wide.merge(deg, on=["replicate", "site_id"])


def rl_surface(out: ChainOutput, train: FitData, grid_sites, grid_designs: dict,
               p: float = 0.99, prob: float = 0.95, seed: int = 0) -> pd.DataFrame:
    """Pointwise posterior mean and HPD bounds of the return level on a grid."""
    grid_sites = np.atleast_2d(np.asarray(grid_sites, float))
    rng = np.random.default_rng(seed)
    eta = krige_draws(out, train.sites, train.designs, grid_sites, grid_designs, rng)
    with np.errstate(all="ignore"):
        q = gev_quantile(p, (eta[..., 0], eta[..., 1], eta[..., 2]))
    lo, hi = hpd_interval(q, prob)
    return pd.DataFrame({"x": grid_sites[:, 0], "y": grid_sites[:, 1], "q_mean": q.mean(axis=0),
                         "q_hpd_lo": lo, "q_hpd_hi": hi})
