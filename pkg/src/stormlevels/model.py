"""Latent Gaussian-process GEV models: weighted, unweighted and PC-penalized.

Each marginal parameter process (mu, log sigma, xi) is a linear regression on
site covariates plus an independent zero-mean Gaussian process. The three
estimating models differ only in the data term:

* ``unweighted``: sum_j sum_i log f(y_ij | eta_j)
* ``weighted``:   sum_j w_j sum_i log f(y_ij | eta_j), w from the extremal coefficient
* ``pc_prior``:   unweighted + sum_j log pi(xi_j | lam), lam ~ InvGamma(2, 1)
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .gev import GevParams, gev_logpdf, gev_logpdf_grad
from .pcprior import default_table
from .spatial import CovarianceSpec, GpField, distances, gp_logdensity

PROCESSES = ("mu", "log_sigma", "xi")
LIKELIHOODS = ("weighted", "unweighted", "pc_prior")
WEIGHT_MODES = ("fixed", "gibbs_updated")
DEFAULT_TERMS = {"mu": ["1", "x", "y"], "log_sigma": ["1", "x", "y"], "xi": ["1"]}


# ------------------------------------------------------------------------- data

def build_design(sites, covariates: dict | None, terms) -> np.ndarray:
    """Design matrix with columns named by ``terms``: ``"1"``, ``"x"``, ``"y"`` or a covariate."""
    sites = np.asarray(sites, float)
    covariates = covariates or {}
    cols = []
    for t in terms:
        if t == "1":
            cols.append(np.ones(sites.shape[0]))
        elif t == "x":
            cols.append(sites[:, 0])
        elif t == "y":
            cols.append(sites[:, 1])
        elif t in covariates:
            cols.append(np.asarray(covariates[t], float))
        else:
            raise KeyError(f"covariate {t!r} not available")
    return np.column_stack(cols)


@dataclass
class FitData:
    """Annual maxima (T x N, NaN for missing years) with sites and per-process designs."""

    y: np.ndarray
    sites: np.ndarray
    designs: dict
    site_ids: list = field(default_factory=list)
    terms: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_TERMS.items()})

    def __post_init__(self):
        self.y = np.asarray(self.y, float)
        self.sites = np.asarray(self.sites, float)
        n = self.sites.shape[0]
        if self.y.ndim != 2 or self.y.shape[1] != n:
            raise ValueError("y must be T x N with one column per site")
        for k in PROCESSES:
            if self.designs[k].shape[0] != n:
                raise ValueError(f"design for {k} has wrong number of rows")
        if not self.site_ids:
            self.site_ids = [f"S{j:03d}" for j in range(n)]

    @classmethod
    def from_arrays(cls, y, sites, covariates=None, terms=None, site_ids=None) -> "FitData":
        terms = {k: list(v) for k, v in (terms or DEFAULT_TERMS).items()}
        designs = {k: build_design(sites, covariates, terms[k]) for k in PROCESSES}
        return cls(y, sites, designs, list(site_ids or []), terms)

    @property
    def n_sites(self) -> int:
        return self.sites.shape[0]

    @property
    def n_obs(self) -> np.ndarray:
        return np.sum(~np.isnan(self.y), axis=0)


# ------------------------------------------------------------------------ specs

@dataclass(frozen=True)
class HyperPrior:
    """Inverse-gamma (shape, scale) on the sill; gamma (shape, rate) on range and smoothness."""

    sill: tuple = (2.0, 1.0)
    range: tuple = (2.0, 1.0)
    smoothness: tuple = (2.0, 2.0)

    def __post_init__(self):
        for v in (self.sill, self.range, self.smoothness):
            if len(v) != 2 or min(v) <= 0:
                raise ValueError("prior hyperparameters must be positive pairs")

    @classmethod
    def centered(cls, sill: float, range_: float) -> "HyperPrior":
        """Prior means at the given sill and range (IG(2, sill), Gamma(2, 2/range))."""
        return cls((2.0, float(sill)), (2.0, 2.0 / float(range_)), (2.0, 2.0))

    def as_array(self) -> np.ndarray:
        return np.array([self.sill, self.range, self.smoothness], float)


@dataclass(frozen=True)
class ModelSpec:
    likelihood: str = "weighted"
    weight_mode: str | None = "fixed"
    beta_prior_var: float = 1e6
    hyperpriors: dict | None = None
    pc_lambda_prior: tuple = (2.0, 1.0)
    cov_kind: str = "powered_exponential"
    smoothness: float = 1.0
    sample_smoothness: bool = False
    jitter: float = 1e-8
    weight_source: str = "smoothed"
    weight_estimator: str = "naive"
    min_overlap: int = 10
    bandwidth: float | None = None

    def __post_init__(self):
        if self.likelihood not in LIKELIHOODS:
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if self.likelihood == "weighted":
            if self.weight_mode not in WEIGHT_MODES:
                raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")
        elif self.weight_mode is not None:
            raise ValueError("weight_mode is only meaningful for the weighted likelihood")
        if self.beta_prior_var <= 0 or min(self.pc_lambda_prior) <= 0:
            raise ValueError("prior parameters must be positive")

    @classmethod
    def named(cls, name: str, **kw) -> "ModelSpec":
        """``weighted`` (fixed weights), ``weighted_gibbs``, ``unweighted`` or ``pc_prior``."""
        if name == "weighted":
            return cls("weighted", "fixed", **kw)
        if name == "weighted_gibbs":
            return cls("weighted", "gibbs_updated", **kw)
        if name in ("unweighted", "pc_prior"):
            return cls(name, None, **kw)
        raise ValueError(f"unknown model {name!r}")

    @property
    def name(self) -> str:
        if self.likelihood == "weighted" and self.weight_mode == "gibbs_updated":
            return "weighted_gibbs"
        return self.likelihood

    @property
    def uses_weights(self) -> bool:
        return self.likelihood == "weighted"

    def with_hyperpriors(self, priors: dict) -> "ModelSpec":
        return dataclasses.replace(self, hyperpriors=dict(priors))

    def sampled_hyper(self) -> np.ndarray:
        """Which of (sill, range, smoothness) are sampled, per process."""
        s = np.ones((3, 3), bool)
        s[:, 2] = self.sample_smoothness
        return s


@dataclass
class LatentState:
    eta: np.ndarray                 # N x 3, columns (mu, log_sigma, xi)
    beta: list                      # three coefficient vectors
    cov: list                       # three CovarianceSpec
    weights: np.ndarray
    pc_lambda: float = 1.0

    def __post_init__(self):
        self.eta = np.asarray(self.eta, float)
        self.weights = np.asarray(self.weights, float)
        GevParams.from_array(self.eta)
        n = self.eta.shape[0]
        if np.any(self.weights < 1.0 / n - 1e-12) or np.any(self.weights > 1.0 + 1e-12):
            raise ValueError("weights must lie in [1/N, 1]")

    @property
    def params(self) -> GevParams:
        return GevParams.from_array(self.eta)

    def copy(self) -> "LatentState":
        return LatentState(self.eta.copy(), [b.copy() for b in self.beta], list(self.cov),
                           self.weights.copy(), self.pc_lambda)


# ------------------------------------------------------------------ likelihoods

def site_loglik(panel, eta) -> np.ndarray:
    """Per-site sum of GEV log densities over present years; -inf on any support violation."""
    y = np.asarray(panel, float)
    params = eta if isinstance(eta, GevParams) else GevParams.from_array(eta)
    mu, ls, xi = (np.asarray(a, float)[None, :] for a in (params.mu, params.log_sigma, params.xi))
    present = ~np.isnan(y)
    lp = gev_logpdf(np.where(present, y, mu), (mu, ls, xi))
    lp = np.where(present, lp, 0.0)
    return np.sum(lp, axis=0)


def weighted_loglik(panel, eta, weights) -> float:
    """sum_j w_j sum_i log f(y_i(s_j); eta(s_j))."""
    ll = site_loglik(panel, eta)
    if np.any(np.isneginf(ll)):
        return -np.inf
    return float(np.sum(np.asarray(weights, float) * ll))


def weighted_loglik_grad(panel, eta, weights) -> np.ndarray:
    """N x 3 gradient of :func:`weighted_loglik` with respect to each site's (mu, log_sigma, xi)."""
    y = np.asarray(panel, float)
    params = eta if isinstance(eta, GevParams) else GevParams.from_array(eta)
    mu, ls, xi = (np.asarray(a, float)[None, :] for a in (params.mu, params.log_sigma, params.xi))
    present = ~np.isnan(y)
    g = gev_logpdf_grad(np.where(present, y, mu), (mu, ls, xi))
    g = np.where(present[..., None], g, 0.0)
    return np.asarray(weights, float)[:, None] * np.sum(g, axis=0)


def effective_info(weights, n_obs) -> np.ndarray:
    """Effective number of independent observations per site, ``w_j * T_j``."""
    return np.asarray(weights, float) * np.asarray(n_obs, float)


def _invgamma_logpdf(x, a, b):
    return a * np.log(b) - special.gammaln(a) - (a + 1) * np.log(x) - b / x


def _gamma_logpdf(x, a, b):
    return a * np.log(b) - special.gammaln(a) + (a - 1) * np.log(x) - b * x


def log_posterior(state: LatentState, data: FitData, spec: ModelSpec) -> float:
    """Unnormalized log posterior density on the natural parameter scale."""
    if spec.hyperpriors is None:
        raise ValueError("spec.hyperpriors must be resolved before evaluating the posterior")
    w = state.weights if spec.uses_weights else np.ones(data.n_sites)
    total = weighted_loglik(data.y, state.eta, w)
    if total == -np.inf:
        return -np.inf
    sampled = spec.sampled_hyper()
    for k, proc in enumerate(PROCESSES):
        gp = GpField(data.sites, state.eta[:, k], data.designs[proc], state.beta[k])
        total += gp_logdensity(gp, state.cov[k])
        b = np.asarray(state.beta[k], float)
        total += float(np.sum(-0.5 * b * b / spec.beta_prior_var
                              - 0.5 * np.log(2 * np.pi * spec.beta_prior_var)))
        hp = spec.hyperpriors[proc]
        c = state.cov[k]
        total += float(_invgamma_logpdf(c.sill, *hp.sill) + _gamma_logpdf(c.range, *hp.range))
        if sampled[k, 2]:
            total += float(_gamma_logpdf(c.smoothness, *hp.smoothness))
    if spec.likelihood == "pc_prior":
        lp = default_table().logpdf(state.eta[:, 2], state.pc_lambda)
        total += float(np.sum(lp))
        total += float(_invgamma_logpdf(state.pc_lambda, *spec.pc_lambda_prior))
    return total


# --------------------------------------------------------------- initialization

def gumbel_moments(y) -> np.ndarray:
    """Moment-matched Gumbel ``(mu, log_sigma, 0)``; always has full support."""
    y = np.asarray(y, float)
    y = y[~np.isnan(y)]
    sd = max(float(np.std(y, ddof=1)), 1e-6 * (1 + abs(float(np.mean(y)))))
    sigma = sd * np.sqrt(6.0) / np.pi
    return np.array([float(np.mean(y)) - 0.5772156649 * sigma, np.log(sigma), 0.0])


def fit_gev_ml(y, xi_bounds=(-0.45, 0.9)) -> np.ndarray:
    """Per-site maximum likelihood by Nelder-Mead; falls back to Gumbel moments."""
    y = np.asarray(y, float)
    y = y[~np.isnan(y)]
    start = gumbel_moments(y)

    def nll(p):
        if not xi_bounds[0] < p[2] < xi_bounds[1]:
            return np.inf
        v = -np.sum(gev_logpdf(y, (p[0], p[1], p[2])))
        return v if np.isfinite(v) else np.inf

    best = start
    for xi0 in (0.1, 0.0):
        p0 = start.copy()
        p0[2] = xi0
        if not np.isfinite(nll(p0)):
            continue
        res = optimize.minimize(nll, p0, method="Nelder-Mead",
                                options=dict(xatol=1e-8, fatol=1e-10, maxiter=4000, maxfev=8000))
        if np.isfinite(res.fun) and res.fun < nll(best):
            best = res.x
    return np.asarray(best, float)


def variogram_hyperpriors(eta0, sites, designs, n_bins: int = 12) -> dict:
    """Hyperpriors centered at an exponential-variogram fit to exploratory estimates."""
    d = distances(sites)
    iu = np.triu_indices(d.shape[0], 1)
    dist = d[iu]
    dmax = float(dist.max()) if dist.size else 1.0
    out = {}
    for k, proc in enumerate(PROCESSES):
        X = designs[proc]
        r = eta0[:, k] - X @ np.linalg.lstsq(X, eta0[:, k], rcond=None)[0]
        var = max(float(np.var(r)), 1e-8)
        g = 0.5 * (r[:, None] - r[None, :])[iu] ** 2
        edges = np.linspace(0, 0.6 * dmax, n_bins + 1)
        idx = np.digitize(dist, edges) - 1
        h, gam, cnt = [], [], []
        for b in range(n_bins):
            m = idx == b
            if m.sum() >= 3:
                h.append(dist[m].mean())
                gam.append(g[m].mean())
                cnt.append(m.sum())
        psill, rng = 0.5 * var, 0.25 * dmax
        if len(h) >= 3:
            h, gam, cnt = map(np.asarray, (h, gam, cnt))

            def resid(p):
                nug, ps, ra = p
                return np.sqrt(cnt) * (nug + ps * (1 - np.exp(-h / ra)) - gam)

            try:
                fit = optimize.least_squares(
                    resid, [0.5 * var, 0.5 * var, 0.25 * dmax],
                    bounds=([0, 0, 0.02 * dmax], [10 * var, 10 * var, 2 * dmax]))
                psill, rng = fit.x[1], fit.x[2]
            except ValueError:
                pass
        out[proc] = HyperPrior.centered(max(psill, 0.05 * var), rng)
    return out


def site_ml_estimates(data: FitData) -> np.ndarray:
    return np.array([fit_gev_ml(data.y[:, j]) for j in range(data.n_sites)])


def initial_state(data: FitData, spec: ModelSpec, weights=None, eta0=None) -> LatentState:
    """Per-site ML estimates, OLS coefficients and prior-mean covariance parameters."""
    eta0 = site_ml_estimates(data) if eta0 is None else np.array(eta0, float)
    if spec.likelihood == "pc_prior":
        eta0[:, 2] = np.clip(eta0[:, 2], -0.45, 0.9)
    beta, cov = [], []
    priors = spec.hyperpriors or {}
    for k, proc in enumerate(PROCESSES):
        X = data.designs[proc]
        b = np.linalg.lstsq(X, eta0[:, k], rcond=None)[0]
        beta.append(b)
        r = eta0[:, k] - X @ b
        hp = priors.get(proc)
        if hp is not None:
            sill = hp.sill[1] / (hp.sill[0] - 1) if hp.sill[0] > 1 else max(np.var(r), 1e-6)
            rng = hp.range[0] / hp.range[1]
        else:
            sill, rng = max(float(np.var(r)), 1e-6), 0.25 * float(distances(data.sites).max())
        cov.append(CovarianceSpec(spec.cov_kind, float(sill), float(rng), spec.smoothness,
                                  spec.jitter))
    if weights is None:
        weights = np.ones(data.n_sites)
    return LatentState(eta0, beta, cov, np.asarray(weights, float), 1.0)
