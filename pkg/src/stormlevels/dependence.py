"""Extremal coefficient estimation and the likelihood weights built from it.

Annual maxima are put on unit Frechet margins (by ranks or by fitted GEV
margins), pairwise extremal coefficients are estimated, smoothed against
distance, and mapped to per-site weights

    w_j = 1/(N-1) * sum_{i != j} N ** (theta(d_ij) - 2),

which equal 1 for an independent field and 1/N under complete dependence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .gev import GevParams, gev_cdf, support_ok
from .spatial import distances

MIN_OVERLAP = 10


@dataclass
class FrechetPanel:
    """T x N unit-Frechet values; NaN marks a missing (or masked) entry."""

    z: np.ndarray
    n_masked: int = 0

    def __post_init__(self):
        self.z = np.asarray(self.z, float)
        if self.z.ndim != 2:
            raise ValueError("z must be a T x N array")
        present = ~np.isnan(self.z)
        if np.any(self.z[present] <= 0):
            raise ValueError("unit Frechet values must be positive")

    @property
    def mask(self) -> np.ndarray:
        """True where a value is present."""
        return ~np.isnan(self.z)


def ecdf_transform(panel) -> FrechetPanel:
    """Rank-based transform of each site's series to unit Frechet.

    Probabilities are ``rank / (T_j + 1)`` with average ranks for ties, so
    neither 0 nor 1 can occur. ``panel`` is T x N with NaN for missing years.
    """
    y = np.asarray(panel, float)
    if y.ndim == 1:
        y = y[:, None]
    z = np.full_like(y, np.nan)
    for j in range(y.shape[1]):
        present = ~np.isnan(y[:, j])
        n = int(present.sum())
        if n < 2:
            raise ValueError(f"site {j} has {n} observations; at least 2 are required")
        ranks = stats.rankdata(y[present, j], method="average")
        z[present, j] = -1.0 / np.log(ranks / (n + 1.0))
    return FrechetPanel(z)


def gev_transform(panel, eta: GevParams) -> FrechetPanel:
    """Transform with per-site GEV margins; entries at or beyond the support are masked."""
    y = np.asarray(panel, float)
    present = ~np.isnan(y)
    mu, ls, xi = (np.asarray(a, float) for a in (eta.mu, eta.log_sigma, eta.xi))
    params = (mu[None, :], ls[None, :], xi[None, :])
    with np.errstate(invalid="ignore"):
        ok = support_ok(np.where(present, y, mu[None, :]), params)
        f = gev_cdf(np.where(present, y, mu[None, :]), params)
    good = present & ok & (f > 0.0) & (f < 1.0)
    z = np.full_like(y, np.nan)
    z[good] = -1.0 / np.log(f[good])
    return FrechetPanel(z, n_masked=int(np.sum(present & ~good)))


@dataclass
class PairwiseTheta:
    """Pairwise extremal coefficient estimates.

    ``theta`` is clamped to [1, 2]; ``theta_raw`` keeps the unclamped values,
    which are what the smoother averages (clamping first biases the curve
    below 2 when the field is independent and T is small).
    """

    i: np.ndarray
    j: np.ndarray
    distance: np.ndarray
    theta: np.ndarray
    theta_raw: np.ndarray
    n_overlap: np.ndarray

    def __len__(self):
        return int(self.distance.size)

    def rows(self):
        return list(zip(self.distance.tolist(), self.theta.tolist(), self.n_overlap.tolist()))


def _naive_pair(inv_a, inv_b):
    # 1/max(z_a, z_b) = min(1/z_a, 1/z_b); NaN if either is missing
    m = np.minimum(inv_a[:, None], inv_b) if inv_b.ndim == 2 else np.minimum(inv_a, inv_b)
    n = np.sum(~np.isnan(m), axis=0)
    s = np.nansum(m, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return n / s, n


def _madogram_pair(f_a, f_b):
    d = np.abs(f_a[:, None] - f_b)
    n = np.sum(~np.isnan(d), axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = 0.5 * np.nansum(d, axis=0) / n
        return (1.0 + 2.0 * nu) / (1.0 - 2.0 * nu), n


def pairwise_theta(z: FrechetPanel, sites, min_overlap: int = MIN_OVERLAP,
                   estimator: str = "naive") -> PairwiseTheta:
    """Estimate the extremal coefficient for every site pair with enough common years.

    ``naive``: theta = T / sum_i 1/max(z_i(s_j), z_i(s_k)).
    ``madogram``: the F-madogram estimator (1 + 2 nu) / (1 - 2 nu).
    """
    zz = z.z if isinstance(z, FrechetPanel) else np.asarray(z, float)
    n_sites = zz.shape[1]
    d = distances(sites)
    if estimator == "naive":
        work = 1.0 / zz
        pair_fn = _naive_pair
    elif estimator == "madogram":
        work = np.exp(-1.0 / zz)
        pair_fn = _madogram_pair
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    ii, jj, th, cnt = [], [], [], []
    for a in range(n_sites - 1):
        t, n = pair_fn(work[:, a], work[:, a + 1:])
        ii.append(np.full(t.size, a))
        jj.append(np.arange(a + 1, n_sites))
        th.append(t)
        cnt.append(n)
    if n_sites < 2:
        empty = np.empty(0)
        return PairwiseTheta(empty.astype(int), empty.astype(int), empty, empty, empty,
                             empty.astype(int))
    ii, jj = np.concatenate(ii), np.concatenate(jj)
    th, cnt = np.concatenate(th), np.concatenate(cnt)
    keep = (cnt >= min_overlap) & np.isfinite(th)
    ii, jj, th, cnt = ii[keep], jj[keep], th[keep], cnt[keep]
    return PairwiseTheta(ii, jj, d[ii, jj], np.clip(th, 1.0, 2.0), th, cnt)


@dataclass
class ExtremalCurve:
    """Smoothed extremal coefficient as a function of distance, valued in [1, 2]."""

    bin_centers: np.ndarray
    theta_hat: np.ndarray
    bandwidth: float
    clamp: bool = True

    def __call__(self, d):
        d = np.asarray(d, float)
        # np.interp holds the end values outside the grid
        out = np.interp(d, self.bin_centers, self.theta_hat)
        return np.clip(out, 1.0, 2.0) if self.clamp else out

    @classmethod
    def constant(cls, value: float) -> "ExtremalCurve":
        return cls(np.array([1.0]), np.array([float(value)]), np.inf)


def kernel_smooth(distance, theta, at, bandwidth):
    """Gaussian-kernel local-constant regression of ``theta`` on ``distance``."""
    distance, theta, at = (np.asarray(a, float) for a in (distance, theta, at))
    if not np.isfinite(bandwidth) or bandwidth <= 0:
        return np.full(at.shape, theta.mean())
    u = (at[:, None] - distance[None, :]) / bandwidth
    k = np.exp(-0.5 * u * u)
    ks = k.sum(axis=1)
    # far outside the data every kernel weight underflows; fall back to nearest pair
    out = np.where(ks > 0, (k @ theta) / np.where(ks > 0, ks, 1.0), np.nan)
    if np.any(ks == 0):
        nearest = theta[np.argmin(np.abs(at[:, None] - distance[None, :]), axis=1)]
        out = np.where(ks > 0, out, nearest)
    return out


def smooth_curve(pairs: PairwiseTheta, bandwidth: float | None = None,
                 n_grid: int = 200, use_raw: bool = True) -> ExtremalCurve:
    """Smooth pairwise estimates against distance.

    Default bandwidth (Gaussian kernel sd) is 0.2 times the largest pairwise
    distance. The grid spans the observed distance range.
    """
    if len(pairs) == 0:
        raise ValueError("no site pairs met the overlap requirement")
    theta = pairs.theta_raw if use_raw else pairs.theta
    dist = pairs.distance
    dmax = float(dist.max())
    if bandwidth is None:
        bandwidth = 0.2 * dmax
    lo = max(float(dist.min()), 1e-12)
    hi = max(dmax, lo)
    grid = np.linspace(lo, hi, n_grid) if hi > lo else np.array([lo])
    vals = kernel_smooth(dist, theta, grid, bandwidth)
    return ExtremalCurve(grid, np.clip(vals, 1.0, 2.0), float(bandwidth))


def theta_matrix(curve, sites, pairs: PairwiseTheta | None = None) -> np.ndarray:
    """N x N matrix of extremal coefficients used by the weights.

    With ``pairs`` given, the raw clamped pairwise estimates are used where
    available and the curve fills in pairs that lacked overlap.
    """
    d = distances(sites)
    th = np.asarray(curve(d), float) if callable(curve) else np.broadcast_to(
        np.asarray(curve, float), d.shape).copy()
    if pairs is not None and len(pairs):
        th[pairs.i, pairs.j] = pairs.theta
        th[pairs.j, pairs.i] = pairs.theta
    return th


def weights_from_theta(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, float)
    n = theta.shape[0]
    if n < 2:
        raise ValueError("weights need at least two sites")
    m = float(n) ** (np.clip(theta, 1.0, 2.0) - 2.0)
    off = ~np.eye(n, dtype=bool)
    m = m[off].reshape(n, n - 1)
    # minimum plus mean excess: exact when all terms are equal
    base = m.min(axis=1)
    w = base + (m - base[:, None]).sum(axis=1) / (n - 1)
    return np.clip(w, 1.0 / n, 1.0)


def compute_weights(curve, sites, pairs: PairwiseTheta | None = None) -> np.ndarray:
    """Per-site likelihood weights in [1/N, 1].

    ``curve`` is an :class:`ExtremalCurve`, any callable of distance, or a
    constant.
    """
    return weights_from_theta(theta_matrix(curve, sites, pairs))


@dataclass
class WeightEstimate:
    weights: np.ndarray
    curve: ExtremalCurve
    pairs: PairwiseTheta
    n_masked: int = 0
    extra: dict = field(default_factory=dict)


def estimate_weights(panel, sites, eta: GevParams | None = None, *, mode: str = "smoothed",
                     estimator: str = "naive", min_overlap: int = MIN_OVERLAP,
                     bandwidth: float | None = None) -> WeightEstimate:
    """Full pipeline: Frechet transform, pairwise estimates, smoothing, weights.

    Uses ranks when ``eta`` is None, otherwise the GEV margins ``eta``.
    ``mode`` is ``smoothed`` (curve at every pair) or ``raw`` (pairwise
    estimates, curve only where a pair lacked overlap).
    """
    if mode not in ("smoothed", "raw"):
        raise ValueError(f"unknown weight mode {mode!r}")
    fp = ecdf_transform(panel) if eta is None else gev_transform(panel, eta)
    pairs = pairwise_theta(fp, sites, min_overlap=min_overlap, estimator=estimator)
    curve = smooth_curve(pairs, bandwidth=bandwidth)
    w = compute_weights(curve, sites, pairs if mode == "raw" else None)
    return WeightEstimate(w, curve, pairs, fp.n_masked)
