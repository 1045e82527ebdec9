"""Covariance functions and Gaussian-process utilities for the latent fields."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, special

JITTER_MAX = 1e-4

KINDS = ("powered_exponential", "matern")


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky failed even after jitter escalation."""


@dataclass(frozen=True)
class CovarianceSpec:
    """Isotropic covariance.

    ``sill`` is the marginal variance. For the powered exponential it is the
    usual sill; for the Matern it equals ``1/tau`` (``tau`` the inverse scale).
    """

    kind: str = "powered_exponential"
    sill: float = 1.0
    range: float = 1.0
    smoothness: float = 1.0
    jitter: float = 1e-8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        for name in ("sill", "range", "smoothness"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")
        if self.kind == "powered_exponential" and self.smoothness > 2:
            raise ValueError("powered exponential smoothness must lie in (0, 2]")

    @classmethod
    def matern(cls, tau: float, rho: float, nu: float, jitter: float = 1e-8):
        return cls("matern", 1.0 / tau, rho, nu, jitter)

    @property
    def tau(self) -> float:
        return 1.0 / self.sill

    def with_params(self, **kw) -> "CovarianceSpec":
        return replace(self, **kw)


def distances(a, b=None) -> np.ndarray:
    """Euclidean distance matrix between rows of ``a`` and ``b``."""
    a = np.atleast_2d(np.asarray(a, float))
    b = a if b is None else np.atleast_2d(np.asarray(b, float))
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def correlation(d, spec: CovarianceSpec) -> np.ndarray:
    d = np.asarray(d, float)
    if spec.kind == "powered_exponential":
        return np.exp(-((d / spec.range) ** spec.smoothness))
    nu = spec.smoothness
    r = d / spec.range
    with np.errstate(invalid="ignore", over="ignore"):
        c = (2.0 ** (1.0 - nu) / special.gamma(nu)) * r**nu * special.kv(nu, r)
    c = np.where(r > 0, c, 1.0)
    # kv underflows to 0 (not nan) for large r, but r**nu * 0 can give nan
    return np.nan_to_num(c, nan=0.0)


def cov_from_distances(d, spec: CovarianceSpec, diag_jitter: bool = False) -> np.ndarray:
    c = spec.sill * correlation(d, spec)
    if diag_jitter:
        c = c + spec.jitter * np.eye(c.shape[0])
    return c


def cov_matrix(spec: CovarianceSpec, sites_a, sites_b=None) -> np.ndarray:
    """Covariance between two site sets; jitter is added when ``sites_b`` is omitted."""
    same = sites_b is None
    return cov_from_distances(distances(sites_a, sites_b), spec, diag_jitter=same)


def cholesky(k: np.ndarray, jitter: float = 1e-8) -> np.ndarray:
    """Lower Cholesky factor, escalating the diagonal jitter x10 up to 1e-4.

    ``k`` is assumed to already carry ``jitter`` on its diagonal.
    """
    n = k.shape[0]
    extra = 0.0
    step = max(jitter, 1e-12)
    while True:
        try:
            return linalg.cholesky(k + extra * np.eye(n), lower=True, check_finite=False)
        except linalg.LinAlgError:
            step *= 10.0
            if step > JITTER_MAX * (1 + 1e-12):
                raise FactorizationError("covariance not positive definite after jitter escalation")
            extra = step - jitter


def mvn_logpdf_chol(r: np.ndarray, chol: np.ndarray) -> float:
    """Log density of a zero-mean normal at ``r`` given its lower Cholesky factor."""
    u = linalg.solve_triangular(chol, r, lower=True, check_finite=False)
    n = r.shape[0]
    return float(-0.5 * (u @ u) - np.sum(np.log(np.diag(chol))) - 0.5 * n * np.log(2 * np.pi))


@dataclass
class GpField:
    """Values of one latent process at sites, with its linear mean ``design @ beta``."""

    sites: np.ndarray
    values: np.ndarray
    design: np.ndarray
    beta: np.ndarray = field(default=None)

    def __post_init__(self):
        sites = np.asarray(self.sites, float)
        self.sites = sites.reshape(0, 2) if sites.size == 0 else np.atleast_2d(sites)
        self.values = np.asarray(self.values, float)
        self.design = np.asarray(self.design, float)
        if self.design.ndim == 1:
            self.design = self.design[:, None]
        if self.beta is None:
            self.beta = np.zeros(self.design.shape[1])
        self.beta = np.asarray(self.beta, float)
        n = self.sites.shape[0]
        if self.values.shape != (n,) or self.design.shape[0] != n:
            raise ValueError("sites, values and design rows must agree")
        if self.beta.shape != (self.design.shape[1],):
            raise ValueError("beta length must match design columns")

    @property
    def mean(self) -> np.ndarray:
        return self.design @ self.beta


def gp_logdensity(gp: GpField, spec: CovarianceSpec) -> float:
    """Multivariate normal log density of the field values."""
    k = cov_matrix(spec, gp.sites)
    chol = cholesky(k, spec.jitter)
    return mvn_logpdf_chol(gp.values - gp.mean, chol)


def krige(gp: GpField, spec: CovarianceSpec, new_sites, new_design, marginal: bool = False):
    """Gaussian conditional mean and covariance of the field at ``new_sites``.

    With ``marginal`` the second result is the vector of conditional variances.
    """
    new_sites = np.atleast_2d(np.asarray(new_sites, float))
    new_design = np.asarray(new_design, float)
    if new_design.ndim == 1:
        new_design = new_design[:, None] if gp.design.shape[1] == 1 else new_design[None, :]
    if new_design.shape != (new_sites.shape[0], gp.design.shape[1]):
        raise ValueError("new_design must have one row per new site and match design columns")
    prior_mean = new_design @ gp.beta
    if marginal:
        k00 = np.full(new_sites.shape[0], float(spec.sill))
    else:
        k00 = cov_matrix(spec, new_sites, new_sites)
    if gp.sites.shape[0] == 0:
        return prior_mean, k00
    chol = cholesky(cov_matrix(spec, gp.sites), spec.jitter)
    k0s = cov_matrix(spec, new_sites, gp.sites)
    a = linalg.solve_triangular(chol, k0s.T, lower=True, check_finite=False)
    b = linalg.solve_triangular(chol, gp.values - gp.mean, lower=True, check_finite=False)
    mean = prior_mean + a.T @ b
    if marginal:
        return mean, np.maximum(k00 - np.sum(a * a, axis=0), 0.0)
    cov = k00 - a.T @ a
    return mean, 0.5 * (cov + cov.T)


def gp_sample(spec: CovarianceSpec, sites, mean, rng: np.random.Generator, size=None):
    """Exact draw(s) of the process at ``sites``; shape ``(N,)`` or ``(size, N)``."""
    k = cov_matrix(spec, sites)
    chol = cholesky(k, spec.jitter)
    n = k.shape[0]
    mean = np.broadcast_to(np.asarray(mean, float), (n,))
    if size is None:
        return mean + chol @ rng.standard_normal(n)
    e = rng.standard_normal((size, n))
    return mean + e @ chol.T
