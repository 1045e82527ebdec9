"""Synthetic spatial annual maxima.

GEV parameter fields are Gaussian processes with powered-exponential
covariances; extremal dependence comes from a Brown-Resnick process with
variogram ``gamma(d) = (d / lam) ** alpha`` (variance of the Gaussian
increments at lag d), simulated exactly with extremal functions.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .gev import GevParams, gev_quantile
from .spatial import CovarianceSpec, cholesky, distances, gp_sample

# (lam, alpha) for each dependence level
DEPENDENCE = {
    "independent": None,
    "weak": (0.25, 0.75),
    "moderate": (0.5, 0.5),
    "strong": (0.75, 0.25),
}

# generating fields: mean = intercept + slope . s, covariance (sill, range, smoothness)
FIELD_MEANS = {
    "mu": (26.0, (0.5, 0.0)),
    "log_sigma": (float(np.log(10.0)), (0.0, 0.05)),
    "xi": (0.12, (0.0, 0.0)),
}
FIELD_COV = {
    "mu": CovarianceSpec("powered_exponential", 4.0, 20.0, 1.0),
    "log_sigma": CovarianceSpec("powered_exponential", 0.4, 5.0, 1.0),
    "xi": CovarianceSpec("powered_exponential", 0.0012, 10.0, 1.0),
}
PROCESSES = ("mu", "log_sigma", "xi")
MAX_XI_REDRAWS = 1000
BLOCK_SIZE = 500


@dataclass(frozen=True)
class GeneratorConfig:
    n_sites: int = 50
    n_years: int = 50
    dependence: str = "moderate"
    seed: int = 0
    half_width: float = 10.0
    method: str = "exact"          # or "approx_spectral"
    n_spectral: int = 500

    def __post_init__(self):
        if self.dependence not in DEPENDENCE:
            raise ValueError(f"unknown dependence level {self.dependence!r}")
        if self.n_sites < 2 or self.n_years < 2:
            raise ValueError("need at least 2 sites and 2 years")
        if self.method not in ("exact", "approx_spectral"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def variogram_params(self):
        return DEPENDENCE[self.dependence]


def variogram(d, lam: float, alpha: float):
    if not (lam > 0 and 0 < alpha <= 2):
        raise ValueError("need lam > 0 and alpha in (0, 2]")
    return (np.asarray(d, float) / lam) ** alpha


def br_extremal_coefficient(d, lam: float, alpha: float):
    """Analytic Brown-Resnick extremal coefficient 2 Phi(sqrt(gamma(d)) / 2)."""
    return 2.0 * stats.norm.cdf(np.sqrt(variogram(d, lam, alpha)) / 2.0)


def field_mean(process: str, sites) -> np.ndarray:
    icpt, slope = FIELD_MEANS[process]
    return icpt + np.asarray(sites, float) @ np.asarray(slope)


def sample_sites(n: int, rng: np.random.Generator, half_width: float = 10.0) -> np.ndarray:
    return rng.uniform(-half_width, half_width, size=(n, 2))


def sample_parameter_fields(sites, rng: np.random.Generator) -> GevParams:
    """Draw the true GEV parameter at each site; shape fields are redrawn until all positive."""
    mu = gp_sample(FIELD_COV["mu"], sites, field_mean("mu", sites), rng)
    ls = gp_sample(FIELD_COV["log_sigma"], sites, field_mean("log_sigma", sites), rng)
    for _ in range(MAX_XI_REDRAWS):
        xi = gp_sample(FIELD_COV["xi"], sites, field_mean("xi", sites), rng)
        if np.all(xi > 0):
            return GevParams(mu, ls, xi)
    raise RuntimeError(f"shape field not positive after {MAX_XI_REDRAWS} redraws")


def _conditional_factors(sites, lam, alpha):
    """Per-site Cholesky factors of W(s) - W(s_j), the Gaussian part of the spectral function."""
    g = variogram(distances(sites), lam, alpha)
    n = g.shape[0]
    factors = []
    for j in range(n):
        others = np.delete(np.arange(n), j)
        c = 0.5 * (g[others, j][:, None] + g[j, others][None, :] - g[np.ix_(others, others)])
        factors.append((others, cholesky(c + 1e-10 * np.eye(n - 1), 1e-10)))
    return g, factors


def _br_block(n_rep, g, factors, rng):
    """Exact simulation of ``n_rep`` realizations by extremal functions."""
    n = g.shape[0]
    z = np.zeros((n_rep, n))
    for j in range(n):
        others, chol = factors[j]
        drift = -0.5 * g[others, j]
        e = rng.exponential(size=n_rep)
        active = np.arange(n_rep)
        while active.size:
            zeta = 1.0 / e[active]
            alive = zeta > z[active, j]
            active, zeta = active[alive], zeta[alive]
            if not active.size:
                break
            w = rng.standard_normal((active.size, n - 1)) @ chol.T
            y = np.empty((active.size, n))
            y[:, j] = 1.0
            y[:, others] = np.exp(w + drift)
            cand = zeta[:, None] * y
            # accept only if the function does not exceed the maximum at earlier sites
            ok = np.all(cand[:, :j] < z[active, :j], axis=1) if j else np.ones(active.size, bool)
            rows = active[ok]
            z[rows] = np.maximum(z[rows], cand[ok])
            e[active] += rng.exponential(size=active.size)
    return z


def _spectral_block(n_rep, sites, lam, alpha, n_spectral, rng):
    """Truncated spectral approximation (biased towards independence for small n_spectral)."""
    n = sites.shape[0]
    anchor = sites[0]
    all_sites = np.vstack([anchor, sites])
    g = variogram(distances(all_sites), lam, alpha)
    c = 0.5 * (g[1:, 0][:, None] + g[0, 1:][None, :] - g[1:, 1:])
    chol = cholesky(c + 1e-10 * np.eye(n), 1e-10)
    drift = -0.5 * g[1:, 0]
    z = np.zeros((n_rep, n))
    e = np.zeros(n_rep)
    for _ in range(n_spectral):
        e += rng.exponential(size=n_rep)
        w = rng.standard_normal((n_rep, n)) @ chol.T
        z = np.maximum(z, np.exp(w + drift) / e[:, None])
    return z


def sample_br_frechet(sites, lam: float, alpha: float, n_rep: int, seed, *,
                      method: str = "exact", n_spectral: int = 500,
                      block_size: int = BLOCK_SIZE) -> np.ndarray:
    """``n_rep`` x N Brown-Resnick realizations with unit Frechet margins.

    Realizations are generated in fixed-size blocks, each from its own child
    stream of ``seed``, so output does not depend on how blocks are scheduled.
    """
    sites = np.asarray(sites, float)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    n_blocks = -(-n_rep // block_size)
    children = ss.spawn(n_blocks)
    if method == "exact":
        g, factors = _conditional_factors(sites, lam, alpha)
    out = []
    for b, child in enumerate(children):
        rng = np.random.default_rng(child)
        m = min(block_size, n_rep - b * block_size)
        if method == "exact":
            out.append(_br_block(m, g, factors, rng))
        else:
            out.append(_spectral_block(m, sites, lam, alpha, n_spectral, rng))
    return np.vstack(out)


def sample_independent_frechet(n_sites: int, n_rep: int, rng: np.random.Generator) -> np.ndarray:
    return 1.0 / rng.exponential(size=(n_rep, n_sites))


@dataclass
class SyntheticDataset:
    sites: np.ndarray
    truth: GevParams
    y: np.ndarray                      # T x N annual maxima
    site_ids: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.site_ids:
            self.site_ids = [f"S{j:03d}" for j in range(self.sites.shape[0])]

    def return_levels(self, p: float = 0.99) -> np.ndarray:
        return gev_quantile(p, self.truth)

    def subset(self, idx) -> "SyntheticDataset":
        idx = np.asarray(idx)
        return SyntheticDataset(self.sites[idx], self.truth[idx], self.y[:, idx],
                                [self.site_ids[k] for k in idx], dict(self.manifest))


def frechet_to_gev(z, truth: GevParams) -> np.ndarray:
    """Site-wise ``y = Q(exp(-1/z); eta(s_j))``."""
    p = np.exp(-1.0 / np.asarray(z, float))
    p = np.clip(p, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    mu, ls, xi = (np.asarray(a, float)[None, :] for a in (truth.mu, truth.log_sigma, truth.xi))
    return gev_quantile(p, (mu, ls, xi))


def assemble_dataset(cfg: GeneratorConfig, sites=None) -> SyntheticDataset:
    """Sites, true margins and annual maxima for one generating configuration."""
    root = np.random.SeedSequence(cfg.seed)
    s_sites, s_fields, s_dep = root.spawn(3)
    if sites is None:
        sites = sample_sites(cfg.n_sites, np.random.default_rng(s_sites), cfg.half_width)
    sites = np.asarray(sites, float)
    truth = sample_parameter_fields(sites, np.random.default_rng(s_fields))
    if cfg.dependence == "independent":
        z = sample_independent_frechet(sites.shape[0], cfg.n_years, np.random.default_rng(s_dep))
    else:
        lam, alpha = cfg.variogram_params
        z = sample_br_frechet(sites, lam, alpha, cfg.n_years, s_dep,
                              method=cfg.method, n_spectral=cfg.n_spectral)
    y = frechet_to_gev(z, truth)
    manifest = {"generator": dataclasses.asdict(cfg)}
    return SyntheticDataset(sites, truth, y, manifest=manifest)
