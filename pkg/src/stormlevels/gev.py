"""Generalized extreme value (GEV) distribution.

All functions broadcast over numpy arrays. Parameters are carried as
``(mu, log_sigma, xi)`` because the latent spatial fields live on that scale.
Shapes with ``|xi| < XI_EPS`` use the exact Gumbel formulas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

XI_EPS = 1e-8
XI_MAX = 5.0


@dataclass(frozen=True)
class GevParams:
    """Location, log-scale and shape; scalars or equal-length arrays (one per site)."""

    mu: np.ndarray | float
    log_sigma: np.ndarray | float
    xi: np.ndarray | float

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        if not np.all(np.isfinite(xi)):
            raise ValueError("xi must be finite")
        if np.any(np.abs(xi) >= XI_MAX):
            raise ValueError(f"|xi| must be < {XI_MAX}")
        if not np.all(np.isfinite(np.asarray(self.mu, dtype=float))):
            raise ValueError("mu must be finite")
        if not np.all(np.isfinite(np.asarray(self.log_sigma, dtype=float))):
            raise ValueError("log_sigma must be finite")

    @property
    def sigma(self):
        return np.exp(self.log_sigma)

    @classmethod
    def from_sigma(cls, mu, sigma, xi) -> "GevParams":
        return cls(mu, np.log(sigma), xi)

    @classmethod
    def from_array(cls, eta) -> "GevParams":
        """Build from an array whose last axis is ``(mu, log_sigma, xi)``."""
        eta = np.asarray(eta, dtype=float)
        return cls(eta[..., 0], eta[..., 1], eta[..., 2])

    def as_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(
            np.asarray(self.mu, float), np.asarray(self.log_sigma, float),
            np.asarray(self.xi, float)), axis=-1)

    def __len__(self):
        return int(np.size(self.mu))

    def __getitem__(self, idx) -> "GevParams":
        mu, ls, xi = np.broadcast_arrays(np.asarray(self.mu, float),
                                         np.asarray(self.log_sigma, float),
                                         np.asarray(self.xi, float))
        return GevParams(mu[idx], ls[idx], xi[idx])


def _unpack(params):
    if isinstance(params, GevParams):
        return (np.asarray(params.mu, float), np.asarray(params.log_sigma, float),
                np.asarray(params.xi, float))
    mu, log_sigma, xi = params
    return np.asarray(mu, float), np.asarray(log_sigma, float), np.asarray(xi, float)


def _t_power(z, xi, small):
    """Return ``log(1 + xi z)`` scaled by ``-1/xi`` (i.e. ``log t``), safe where small."""
    xi_safe = np.where(small, 1.0, xi)
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.log1p(xi_safe * z)
    return np.where(small, -z, -a / xi_safe), a


def support_ok(y, params) -> np.ndarray:
    """True where ``y`` lies strictly inside the support."""
    mu, log_sigma, xi = _unpack(params)
    z = (np.asarray(y, float) - mu) / np.exp(log_sigma)
    small = np.abs(xi) < XI_EPS
    return small | (1.0 + xi * z > 0.0)


def gev_cdf(y, params):
    """Distribution function; 0 below / 1 above the support."""
    mu, log_sigma, xi = _unpack(params)
    y = np.asarray(y, float)
    z = (y - mu) / np.exp(log_sigma)
    small = np.abs(xi) < XI_EPS
    log_t, _ = _t_power(z, xi, small)
    inside = small | (1.0 + xi * z > 0.0)
    with np.errstate(over="ignore"):
        out = np.exp(-np.exp(np.where(inside, log_t, 0.0)))
    # outside support: below lower endpoint when xi > 0, above upper when xi < 0
    outside_val = np.where(xi > 0, 0.0, 1.0)
    out = np.where(inside, out, outside_val)
    return out[()] if out.ndim == 0 else out


def gev_logpdf(y, params):
    """Log density; ``-inf`` outside the support."""
    mu, log_sigma, xi = _unpack(params)
    y = np.asarray(y, float)
    z = (y - mu) / np.exp(log_sigma)
    small = np.abs(xi) < XI_EPS
    log_t, a = _t_power(z, xi, small)
    inside = small | (1.0 + xi * z > 0.0)
    log_t = np.where(inside, log_t, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        # log f = -log sigma + (1 + xi) log t - t, with t = (1 + xi z)^(-1/xi)
        out = -log_sigma + np.where(small, 1.0, 1.0 + xi) * log_t - np.exp(log_t)
    out = np.where(inside, out, -np.inf)
    return out[()] if out.ndim == 0 else out


def gev_logpdf_grad(y, params) -> np.ndarray:
    """Gradient of the log density w.r.t. ``(mu, log_sigma, xi)``.

    Returns an array with a trailing axis of length 3. Entries outside the
    support are NaN.
    """
    mu, log_sigma, xi = _unpack(params)
    y = np.asarray(y, float)
    z = (y - mu) / np.exp(log_sigma)
    sigma = np.exp(log_sigma)
    small = np.abs(xi) < XI_EPS
    xi_s = np.where(small, 1.0, xi)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        t = 1.0 + xi_s * z
        L = np.log1p(xi_s * z)
        tp = np.exp(-L / xi_s)  # t^(-1/xi)
        g_mu = ((1.0 + xi_s) / t - tp / t) / sigma
        g_xi = (1.0 - tp) * (L / xi_s**2 - z / (xi_s * t)) - z / t
        ez = np.exp(-z)
        g_mu0 = (1.0 - ez) / sigma
        g_xi0 = 0.5 * z * z * (1.0 - ez) - z
    g_mu = np.where(small, g_mu0, g_mu)
    g_xi = np.where(small, g_xi0, g_xi)
    g_ls = -1.0 + z * sigma * g_mu
    out = np.stack(np.broadcast_arrays(g_mu, g_ls, g_xi), axis=-1)
    inside = small | (1.0 + xi * z > 0.0)
    return np.where(inside[..., None], out, np.nan)


def gev_quantile(p, params):
    """Quantile function, defined for ``p`` in the open interval (0, 1)."""
    p = np.asarray(p, float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("p must lie strictly inside (0, 1)")
    mu, log_sigma, xi = _unpack(params)
    small = np.abs(xi) < XI_EPS
    xi_s = np.where(small, 1.0, xi)
    lml = np.log(-np.log(p))
    general = np.expm1(-xi_s * lml) / xi_s
    out = mu + np.exp(log_sigma) * np.where(small, -lml, general)
    return out[()] if np.ndim(out) == 0 else out


def gev_sample(size, params, rng: np.random.Generator):
    """Inverse-CDF draws."""
    u = rng.uniform(size=size)
    u = np.clip(u, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return gev_quantile(u, params)


def to_frechet(cdf_value):
    """Map CDF values in (0, 1) to the unit Frechet scale, ``z = -1/log F``."""
    cdf_value = np.asarray(cdf_value, float)
    if np.any(~((cdf_value > 0.0) & (cdf_value < 1.0))):
        raise ValueError("cdf_value must lie strictly inside (0, 1)")
    out = -1.0 / np.log(cdf_value)
    return out[()] if out.ndim == 0 else out


def return_level(params, p: float = 0.99):
    """Level exceeded with annual probability ``1 - p``."""
    return gev_quantile(p, params)
