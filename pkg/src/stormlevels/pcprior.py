"""Penalized-complexity prior for the GEV shape parameter.

The base model is the Gumbel (xi = 0). The distance from it is
``d(xi) = sqrt(2 KL(GEV(0,1,xi) || GEV(0,1,0)))`` and the prior puts an
exponential(lam) law on ``d`` separately on each side of zero, each side
carrying mass 1/2 on its part of the window::

    log pi(xi | lam) = log(1/2) + log lam - lam d(xi) + log|d'(xi)|
                       - log(1 - exp(-lam d(end of side)))

``d`` is computed by quadrature on a grid and interpolated with cubic splines.
"""

from __future__ import annotations

import warnings
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

XI_LOW = -0.5
XI_HIGH = 0.999
GRID_SIZE = 512
FD_STEP = 1e-4


def kl_to_gumbel(xi: float) -> float:
    """KL divergence of GEV(0, 1, xi) from the standard Gumbel, by quadrature.

    Substituting t = -log F(y) gives log f_xi = (1 + xi) log t - t, so the
    expectation becomes an integral against exp(-t) on (0, inf).
    """
    xi = float(xi)
    if xi == 0.0:
        return 0.0

    def integrand(t):
        y = np.expm1(-xi * np.log(t)) / xi
        return ((1.0 + xi) * np.log(t) - t + y) * np.exp(-t) + np.exp(-y - t)

    opts = dict(limit=400, epsabs=1e-14, epsrel=1e-12)
    # near xi = 0 the integrand is pure roundoff at these tolerances
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        a, _ = integrate.quad(integrand, 0.0, 1.0, **opts)
        b, _ = integrate.quad(integrand, 1.0, np.inf, **opts)
    return max(a + b, 0.0)


@lru_cache(maxsize=None)
def _splines():
    half = GRID_SIZE // 2
    # negative side on a uniform grid; positive side uniform in u = -log(1 - xi)
    xi_neg = np.linspace(XI_LOW, 0.0, half)
    u = np.linspace(0.0, -np.log1p(-XI_HIGH), half)
    xi_pos = -np.expm1(-u)
    d_neg = np.sqrt(2.0 * np.array([kl_to_gumbel(x) for x in xi_neg]))
    d_pos = np.sqrt(2.0 * np.array([kl_to_gumbel(x) for x in xi_pos]))
    neg = CubicSpline(xi_neg, d_neg)
    pos = CubicSpline(u, d_pos)
    return neg, pos, float(d_neg[0]), float(d_pos[-1])


def _check_window(xi):
    xi = np.asarray(xi, float)
    if np.any((xi < XI_LOW) | (xi > XI_HIGH)):
        raise ValueError(f"xi must lie in [{XI_LOW}, {XI_HIGH}]")
    return xi


def _d(xi):
    neg, pos, _, _ = _splines()
    xi = np.asarray(xi, float)
    out = np.where(xi < 0, neg(np.minimum(xi, 0.0)),
                   pos(-np.log1p(-np.clip(xi, 0.0, XI_HIGH))))
    return np.where(xi == 0, 0.0, np.maximum(out, 0.0))


def pc_distance(xi):
    """Square-root KL distance of GEV(0,1,xi) from the Gumbel; exactly 0 at xi = 0."""
    xi = _check_window(xi)
    out = _d(xi)
    return out[()] if out.ndim == 0 else out


def pc_distance_slope(xi):
    """|d'(xi)| by central differences, one-sided at zero and at the window ends."""
    xi = _check_window(xi)
    h = FD_STEP
    pos = xi >= 0
    lo = np.where(pos, np.maximum(xi - h, 0.0), np.maximum(xi - h, XI_LOW))
    hi = np.where(pos, np.minimum(xi + h, XI_HIGH), np.minimum(xi + h, 0.0))
    lo = np.where(pos & (xi == 0), 0.0, lo)
    out = np.abs((_d(hi) - _d(lo)) / (hi - lo))
    return out[()] if out.ndim == 0 else out


def side_mass(lam: float):
    """Untruncated-exponential mass on the (negative, positive) side of the window."""
    _, _, d_lo, d_hi = _splines()
    return -np.expm1(-lam * d_lo), -np.expm1(-lam * d_hi)


def pc_logprior(xi, lam: float):
    """Log density of the two-sided PC prior at ``xi`` given rate ``lam``."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    xi = _check_window(xi)
    m_neg, m_pos = side_mass(lam)
    norm = np.where(xi < 0, np.log(m_neg), np.log(m_pos))
    out = (np.log(0.5) + np.log(lam) - lam * _d(xi) + np.log(pc_distance_slope(xi)) - norm)
    return out[()] if out.ndim == 0 else out


class PcTable:
    """Uniform-grid lookup of ``d`` and ``log|d'|`` for fast repeated evaluation."""

    def __init__(self, n: int = 30001):
        self.lo, self.hi = XI_LOW, XI_HIGH
        self.grid = np.linspace(self.lo, self.hi, n)
        self.step = (self.hi - self.lo) / (n - 1)
        self.d = np.asarray(pc_distance(self.grid), float)
        self.log_slope = np.log(np.asarray(pc_distance_slope(self.grid), float))
        _, _, self.d_lo, self.d_hi = _splines()

    def logpdf(self, xi, lam: float):
        xi = np.asarray(xi, float)
        inside = (xi >= self.lo) & (xi <= self.hi)
        xc = np.clip(xi, self.lo, self.hi)
        d = np.interp(xc, self.grid, self.d)
        ls = np.interp(xc, self.grid, self.log_slope)
        m_neg, m_pos = -np.expm1(-lam * self.d_lo), -np.expm1(-lam * self.d_hi)
        norm = np.where(xc < 0, np.log(m_neg), np.log(m_pos))
        out = np.log(0.5) + np.log(lam) - lam * d + ls - norm
        return np.where(inside, out, -np.inf)


@lru_cache(maxsize=1)
def default_table() -> PcTable:
    return PcTable()
