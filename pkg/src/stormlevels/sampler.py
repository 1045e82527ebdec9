"""Metropolis-within-Gibbs sampler for the latent GEV models.

Sweep order per iteration:

1. random-walk Metropolis on each site's (mu, log sigma, xi), joint Gaussian proposal
2. exact normal draw of each regression block beta given its Gaussian process
3. Metropolis on the log of each sampled covariance parameter
4. PC model: Metropolis on log lambda
5. weighted model with gibbs-updated weights: weights recomputed from the current margins

Proposal scales adapt during burn-in only. Every random number is drawn from a
per-chain generator in a fixed order, so a chain is a pure function of its seed.
"""

from __future__ import annotations

import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import multiprocessing

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits

from . import _kernels as K
from .dependence import estimate_weights
from .gev import GevParams, gev_logpdf_grad, gev_quantile
from .model import (PROCESSES, FitData, LatentState, ModelSpec, initial_state, log_posterior,
                    site_ml_estimates, variogram_hyperpriors)
from .pcprior import default_table
from .spatial import CovarianceSpec, distances

HYPER_NAMES = ("sill", "range", "smoothness")
PROC_LABEL = {"mu": "mu", "log_sigma": "logsigma", "xi": "xi"}
KIND_CODE = {"powered_exponential": K.POWEXP, "matern": K.MATERN}


class SamplerError(RuntimeError):
    """Raised when a chain cannot start or its covariance cannot be factored."""


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 20000
    burn_in: int = 2000
    thin: int = 10
    seed: int = 0
    target_accept_site: float = 0.23
    target_accept_scalar: float = 0.44
    adapt_window: int = 50
    chains: int = 1
    update_eta: bool = True
    update_beta: bool = True
    update_hyper: bool = True
    update_lambda: bool = True
    update_weights: bool = True

    def __post_init__(self):
        if self.iterations < 1 or self.burn_in < 0 or self.thin < 1 or self.chains < 1:
            raise ValueError("iterations, thin and chains must be positive; burn_in nonnegative")
        if not self.burn_in < self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if self.thin > self.iterations - self.burn_in:
            raise ValueError("thin must not exceed iterations - burn_in")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be positive")

    @property
    def n_draws(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


def adapt_step(scale, accept_rate, target, kappa: float = 1.0):
    """Robbins-Monro update ``scale * exp(kappa * (accept_rate - target))``."""
    return np.asarray(scale, float) * np.exp(kappa * (np.asarray(accept_rate, float) - target))


# ---------------------------------------------------------------------- output

@dataclass
class ChainOutput:
    eta: np.ndarray            # S x N x 3
    beta: list                 # three arrays, S x p_k
    hyper: np.ndarray          # S x 3 x 3 (sill, range, smoothness)
    weights: np.ndarray        # S x N
    pc_lambda: np.ndarray      # S
    site_ids: list
    terms: dict
    cov_kinds: list
    model: str
    acceptance: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.eta.shape[0]

    def params(self) -> GevParams:
        return GevParams.from_array(self.eta)

    def return_levels(self, p: float = 0.99) -> np.ndarray:
        """S x N draws of the return level with annual exceedance probability ``1 - p``."""
        return gev_quantile(p, (self.eta[..., 0], self.eta[..., 1], self.eta[..., 2]))

    def state(self, s: int) -> LatentState:
        cov = [CovarianceSpec(self.cov_kinds[k], *self.hyper[s, k]) for k in range(3)]
        return LatentState(self.eta[s], [b[s] for b in self.beta], cov, self.weights[s],
                           float(self.pc_lambda[s]))

    def to_frame(self) -> pd.DataFrame:
        cols = {}
        for k, proc in enumerate(PROCESSES):
            for j, sid in enumerate(self.site_ids):
                cols[f"{PROC_LABEL[proc]}.{sid}"] = self.eta[:, j, k]
        for k, proc in enumerate(PROCESSES):
            for c, term in enumerate(self.terms[proc]):
                cols[f"beta.{PROC_LABEL[proc]}.{term}"] = self.beta[k][:, c]
        for k, proc in enumerate(PROCESSES):
            for m, name in enumerate(HYPER_NAMES):
                cols[f"{name}.{PROC_LABEL[proc]}"] = self.hyper[:, k, m]
        if self.model == "pc_prior":
            cols["lambda"] = self.pc_lambda
        for j, sid in enumerate(self.site_ids):
            cols[f"w.{sid}"] = self.weights[:, j]
        return pd.DataFrame(cols)

    def write(self, csv_path, manifest_path=None):
        self.to_frame().to_csv(csv_path, index=False, float_format="%.17g")
        if manifest_path is not None:
            with open(manifest_path, "w") as fh:
                json.dump(self.summary_manifest(), fh, indent=2, sort_keys=True, default=_jsonable)

    def summary_manifest(self) -> dict:
        return {"model": self.model, "site_ids": list(self.site_ids), "terms": self.terms,
                "cov_kinds": list(self.cov_kinds), "n_draws": self.n_draws,
                "acceptance": self.acceptance, "timing": self.timing, **self.manifest}

    @classmethod
    def read(cls, csv_path, manifest_path) -> "ChainOutput":
        with open(manifest_path) as fh:
            man = json.load(fh)
        df = pd.read_csv(csv_path, float_precision="round_trip")
        ids, terms = man["site_ids"], man["terms"]
        eta = np.stack([np.column_stack([df[f"{PROC_LABEL[p]}.{s}"] for s in ids])
                        for p in PROCESSES], axis=-1)
        beta = [np.column_stack([df[f"beta.{PROC_LABEL[p]}.{t}"] for t in terms[p]])
                for p in PROCESSES]
        hyper = np.stack([np.column_stack([df[f"{n}.{PROC_LABEL[p]}"] for n in HYPER_NAMES])
                          for p in PROCESSES], axis=1)
        lam = df["lambda"].to_numpy() if "lambda" in df else np.ones(len(df))
        w = np.column_stack([df[f"w.{s}"] for s in ids])
        extra = {k: v for k, v in man.items() if k not in
                 ("model", "site_ids", "terms", "cov_kinds", "n_draws", "acceptance", "timing")}
        return cls(eta, beta, hyper, w, lam, ids, terms, man["cov_kinds"], man["model"],
                   man.get("acceptance", {}), man.get("timing", {}), extra)

    @classmethod
    def concat(cls, outs: list) -> "ChainOutput":
        first = outs[0]
        return cls(np.concatenate([o.eta for o in outs]),
                   [np.concatenate([o.beta[k] for o in outs]) for k in range(3)],
                   np.concatenate([o.hyper for o in outs]),
                   np.concatenate([o.weights for o in outs]),
                   np.concatenate([o.pc_lambda for o in outs]),
                   first.site_ids, first.terms, first.cov_kinds, first.model,
                   {f"chain{c}": o.acceptance for c, o in enumerate(outs)},
                   {f"chain{c}": o.timing for c, o in enumerate(outs)},
                   dict(first.manifest, chains=len(outs)))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")


# ----------------------------------------------------------------------- state

class _Chain:
    """Packed arrays shared with the compiled sweep."""

    def __init__(self, data: FitData, spec: ModelSpec, state: LatentState):
        n = data.n_sites
        self.n = n
        self.y = np.ascontiguousarray(data.y)
        self.D = distances(data.sites)
        self.p = np.array([data.designs[k].shape[1] for k in PROCESSES], np.int64)
        pmax = int(self.p.max())
        self.X = np.zeros((3, n, pmax))
        self.beta = np.zeros((3, pmax))
        for k, proc in enumerate(PROCESSES):
            self.X[k, :, :self.p[k]] = data.designs[proc]
            self.beta[k, :self.p[k]] = state.beta[k]
        self.kind = np.array([KIND_CODE[c.kind] for c in state.cov], np.int64)
        self.jitter = float(state.cov[0].jitter)
        self.hyp = np.array([[c.sill, c.range, c.smoothness] for c in state.cov], float)
        self.hp = np.stack([spec.hyperpriors[k].as_array() for k in PROCESSES])
        self.sampled = spec.sampled_hyper()
        self.eta = np.array(state.eta, float)
        self.Q = np.zeros((3, n, n))
        self.logdet = np.zeros(3)
        self.resid = np.zeros((3, n))
        self.means = np.zeros((3, n))
        self.ll = np.array([K.site_loglik(self.y[:, j], *self.eta[j]) for j in range(n)])
        w = state.weights if spec.uses_weights else np.ones(n)
        self.w = np.array(w, float)
        self.lam = np.array([float(state.pc_lambda)])
        self.pc = spec.likelihood == "pc_prior"
        tab = default_table()
        self.pc_args = (tab.d, tab.log_slope, tab.lo, tab.step, tab.d_lo, tab.d_hi)
        self.lam_prior = np.array(spec.pc_lambda_prior, float)
        self.beta_prec = 1.0 / spec.beta_prior_var
        C = np.empty((n, n))
        L = np.empty((n, n))
        for k in range(3):
            if not K.refresh_process(k, self.X, self.p, self.beta, self.eta, self.hyp, self.kind,
                                     self.D, self.jitter, self.Q, self.logdet, self.resid,
                                     self.means, C, L):
                raise SamplerError(f"covariance of {PROCESSES[k]} could not be factored at init")

    def latent(self, cov_kinds) -> LatentState:
        cov = [CovarianceSpec(cov_kinds[k], *self.hyp[k], jitter=self.jitter) for k in range(3)]
        beta = [self.beta[k, :self.p[k]].copy() for k in range(3)]
        return LatentState(self.eta.copy(), beta, cov, self.w.copy(), float(self.lam[0]))


def _laplace_sd(ch: _Chain) -> np.ndarray:
    """Per-site, per-component conditional posterior sd from the curvature at the current state."""
    h = 1e-4
    sd = np.empty((ch.n, 3))
    for j in range(ch.n):
        y = ch.y[:, j]
        y = y[~np.isnan(y)]
        for c in range(3):
            up, dn = ch.eta[j].copy(), ch.eta[j].copy()
            up[c] += h
            dn[c] -= h
            with np.errstate(all="ignore"):
                gu = np.sum(gev_logpdf_grad(y, tuple(up))[..., c])
                gd = np.sum(gev_logpdf_grad(y, tuple(dn))[..., c])
            curv = -ch.w[j] * (gu - gd) / (2 * h)
            prec = (curv if np.isfinite(curv) and curv > 0 else 0.0) + ch.Q[c, j, j]
            sd[j, c] = 1.0 / np.sqrt(prec)
    return sd


class _Draws:
    def __init__(self, rng: np.random.Generator, n_sites: int, pmax: int):
        self.rng, self.n, self.pmax = rng, n_sites, pmax

    def block(self, m: int):
        r = self.rng
        z_site = r.standard_normal((m, self.n, 3))
        u_site = np.log(r.random((m, self.n)))
        z_beta = r.standard_normal((m, 3, self.pmax))
        z_hyp = r.standard_normal((m, 3, 3))
        u_hyp = np.log(r.random((m, 3, 3)))
        z_lam = r.standard_normal(m)
        u_lam = np.log(r.random(m))
        return z_site, u_site, z_beta, z_hyp, u_hyp, z_lam, u_lam


# ----------------------------------------------------------------------- chain

def chain_seed(seed: int, chain_index: int) -> np.random.SeedSequence:
    """Independent stream for chain ``chain_index`` of a run seeded with ``seed``."""
    return np.random.SeedSequence(seed, spawn_key=(chain_index,))


def prepare(data: FitData, spec: ModelSpec, weights=None, init: LatentState | None = None):
    """Resolve hyperpriors, fixed weights and the initial state (all deterministic)."""
    eta0 = None
    if spec.hyperpriors is None:
        eta0 = site_ml_estimates(data) if init is None else init.eta
        spec = spec.with_hyperpriors(variogram_hyperpriors(eta0, data.sites, data.designs))
    if spec.uses_weights and weights is None:
        weights = estimate_weights(data.y, data.sites, mode=spec.weight_source,
                                   estimator=spec.weight_estimator,
                                   min_overlap=spec.min_overlap,
                                   bandwidth=spec.bandwidth).weights
    if init is None:
        init = initial_state(data, spec, weights, eta0=eta0)
    elif weights is not None:
        init = dataclasses.replace(init, weights=np.asarray(weights, float))
    return spec, init


def run_chain(data: FitData, spec: ModelSpec, cfg: SamplerConfig, init: LatentState | None = None,
              *, weights=None, chain_index: int = 0) -> ChainOutput:
    """Run one chain; ``init`` defaults to per-site ML with regression coefficients by OLS."""
    t0 = time.perf_counter()
    with threadpool_limits(1):
        spec, init = prepare(data, spec, weights, init)
        lp0 = log_posterior(init, data, spec)
        if not np.isfinite(lp0):
            raise SamplerError("initial state has non-finite log posterior")
        out = _sample(data, spec, cfg, init, chain_index)
    out.timing["total_seconds"] = time.perf_counter() - t0
    return out


def _sample(data, spec, cfg, init, chain_index) -> ChainOutput:
    ch = _Chain(data, spec, init)
    n = ch.n
    rng = np.random.default_rng(chain_seed(cfg.seed, chain_index))
    draws = _Draws(rng, n, ch.beta.shape[1])
    gibbs = spec.uses_weights and spec.weight_mode == "gibbs_updated" and cfg.update_weights
    do_eta, do_beta, do_hyper = cfg.update_eta, cfg.update_beta, cfg.update_hyper
    do_hyper = do_hyper and bool(ch.sampled.any())
    do_pc = ch.pc and cfg.update_lambda

    base = _laplace_sd(ch)
    factor = np.full(n, 2.38 / np.sqrt(3.0))
    hyp_sd = np.full((3, 3), 0.3)
    lam_sd = np.array([0.5])
    acc_site = np.zeros(n, np.int64)
    acc_hyp = np.zeros((3, 3), np.int64)
    acc_lam = np.zeros(1, np.int64)
    eta_sum = np.zeros((n, 3))
    eta_sumsq = np.zeros((n, 3))

    def advance(m):
        steps = [1] * m if gibbs else [m]
        for s in steps:
            zs = draws.block(s)
            K.run_block(s, ch.y, ch.D, ch.X, ch.p, ch.kind, ch.jitter, ch.beta_prec, ch.hp,
                        ch.sampled, do_eta, do_beta, do_hyper, ch.pc,
                        *ch.pc_args, ch.lam_prior,
                        ch.eta, ch.beta, ch.hyp, ch.Q, ch.logdet, ch.resid, ch.means, ch.ll,
                        ch.w, ch.lam, factor[:, None] * base, hyp_sd, lam_sd, *zs,
                        acc_site, acc_hyp, acc_lam, eta_sum, eta_sumsq)
            if gibbs:
                _update_weights(ch, data, spec)

    if ch.pc and not do_pc:
        lam_sd[0] = 0.0  # lambda frozen: proposals equal the current value

    # burn-in with adaptation
    w_len = cfg.adapt_window
    n_windows = cfg.burn_in // w_len
    emp_start = 2
    t0 = time.perf_counter()
    for t in range(1, n_windows + 1):
        acc_site[:] = 0
        acc_hyp[:] = 0
        acc_lam[:] = 0
        advance(w_len)
        kappa = 1.0 / np.sqrt(t)
        factor = adapt_step(factor, acc_site / w_len, cfg.target_accept_site, kappa)
        hyp_sd = adapt_step(hyp_sd, acc_hyp / w_len, cfg.target_accept_scalar, kappa)
        if do_pc:
            lam_sd = adapt_step(lam_sd, acc_lam / w_len, cfg.target_accept_scalar, kappa)
        if t == emp_start:
            eta_sum[:] = 0.0
            eta_sumsq[:] = 0.0
        elif t > emp_start + 1 and t % 2 == 0:
            cnt = (t - emp_start) * w_len
            var = eta_sumsq / cnt - (eta_sum / cnt) ** 2
            emp = np.sqrt(np.maximum(var, 0.0))
            # switch a site to its empirical scale only once it has clearly moved
            lap = _laplace_sd(ch)
            moved = np.all(emp > 0.2 * lap, axis=1)
            new_base = np.where(moved[:, None], emp, lap)
            # keep the overall proposal size continuous across the switch
            ratio = np.sqrt(np.prod(base / new_base, axis=1)) ** (2.0 / 3.0)
            factor = factor * ratio
            base = new_base
    rest = cfg.burn_in - n_windows * w_len
    if rest:
        advance(rest)
    burn_seconds = time.perf_counter() - t0

    # sampling with frozen scales
    acc_site[:] = 0
    acc_hyp[:] = 0
    acc_lam[:] = 0
    S = cfg.n_draws
    out_eta = np.empty((S, n, 3))
    out_beta = [np.empty((S, int(ch.p[k]))) for k in range(3)]
    out_hyp = np.empty((S, 3, 3))
    out_w = np.empty((S, n))
    out_lam = np.empty(S)
    t1 = time.perf_counter()
    for s in range(S):
        advance(cfg.thin)
        out_eta[s] = ch.eta
        for k in range(3):
            out_beta[k][s] = ch.beta[k, :ch.p[k]]
        out_hyp[s] = ch.hyp
        out_w[s] = ch.w
        out_lam[s] = ch.lam[0]
    sample_seconds = time.perf_counter() - t1
    n_post = max(S * cfg.thin, 1)

    acceptance = {"site_mean": float(np.mean(acc_site) / n_post),
                  "site": (acc_site / n_post).tolist()}
    for k, proc in enumerate(PROCESSES):
        for m, name in enumerate(HYPER_NAMES):
            if ch.sampled[k, m] and do_hyper:
                acceptance[f"{name}.{PROC_LABEL[proc]}"] = float(acc_hyp[k, m] / n_post)
    if do_pc:
        acceptance["lambda"] = float(acc_lam[0] / n_post)
    cov_kinds = [c.kind for c in init.cov]
    manifest = {"seed": int(cfg.seed), "chain_index": int(chain_index),
                "sampler": dataclasses.asdict(cfg), "spec": spec_dict(spec),
                "weight_mode": spec.weight_mode}
    return ChainOutput(out_eta, out_beta, out_hyp, out_w, out_lam, list(data.site_ids),
                       {k: list(v) for k, v in data.terms.items()}, cov_kinds, spec.name,
                       acceptance, {"burn_in_seconds": burn_seconds,
                                    "sampling_seconds": sample_seconds}, manifest)


def _update_weights(ch: _Chain, data: FitData, spec: ModelSpec):
    try:
        est = estimate_weights(data.y, data.sites, eta=GevParams.from_array(ch.eta),
                               mode=spec.weight_source, estimator=spec.weight_estimator,
                               min_overlap=spec.min_overlap, bandwidth=spec.bandwidth)
    except ValueError:
        return  # too few usable pairs this sweep; keep the previous weights
    ch.w[:] = est.weights


def spec_dict(spec: ModelSpec) -> dict:
    d = dataclasses.asdict(spec)
    if spec.hyperpriors is not None:
        d["hyperpriors"] = {k: dataclasses.asdict(v) for k, v in spec.hyperpriors.items()}
    return d


def _chain_job(args):
    return run_chain(*args[:4], weights=args[4], chain_index=args[5])


def run_chains(data: FitData, spec: ModelSpec, cfg: SamplerConfig, *, threads: int = 1,
               weights=None, init: LatentState | None = None) -> ChainOutput:
    """Run ``cfg.chains`` independent chains (in parallel when ``threads > 1``) and pool them.

    Priors and weights are resolved once so every chain targets the same posterior.
    """
    with threadpool_limits(1):
        spec, init = prepare(data, spec, weights, init)
    jobs = [(data, spec, cfg, init, init.weights if spec.uses_weights else None, c)
            for c in range(cfg.chains)]
    if threads > 1 and cfg.chains > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=min(threads, cfg.chains), mp_context=ctx) as ex:
            outs = list(ex.map(_chain_job, jobs))
    else:
        outs = [_chain_job(j) for j in jobs]
    return ChainOutput.concat(outs) if len(outs) > 1 else outs[0]
