"""Chain diagnostics: autocorrelation, integrated autocorrelation time, ESS, HPD intervals."""

from __future__ import annotations

import numpy as np
import pandas as pd

MIN_DRAWS = 100


def acf(x, max_lag: int | None = None) -> np.ndarray:
    """Sample autocorrelation at lags 0..max_lag by FFT; a constant chain gives 1 at lag 0, 0 after."""
    x = np.asarray(x, float)
    n = x.size
    if max_lag is None:
        max_lag = n - 1
    max_lag = min(max_lag, n - 1)
    if np.ptp(x) == 0:
        out = np.zeros(max_lag + 1)
        out[0] = 1.0
        return out
    xc = x - x.mean()
    var = np.dot(xc, xc)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    r = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1]
    return r / var


def integrated_time(x) -> float:
    """Integrated autocorrelation time by Geyer's initial monotone sequence estimator."""
    x = np.asarray(x, float)
    n = x.size
    if np.ptp(x) == 0:
        return 1.0
    rho = acf(x)
    # sums of adjacent pairs are positive and decreasing for a reversible chain
    m = (n - 1) // 2
    pairs = rho[0:2 * m:2] + rho[1:2 * m:2]
    tau = -1.0
    prev = np.inf
    for g in pairs:
        if g <= 0:
            break
        g = min(g, prev)
        tau += 2.0 * g
        prev = g
    return max(tau, 1.0 / n)


def ess(x) -> float:
    x = np.asarray(x, float)
    return x.size / integrated_time(x)


def hpd_interval(draws, prob: float = 0.95, axis: int = 0):
    """Shortest interval containing ``ceil(prob * n)`` sorted draws, along ``axis``."""
    d = np.sort(np.moveaxis(np.asarray(draws, float), axis, 0), axis=0)
    n = d.shape[0]
    k = int(np.ceil(prob * n))
    if k < 1 or n < 1:
        raise ValueError("need at least one draw")
    k = min(k, n)
    widths = d[k - 1:] - d[: n - k + 1]
    i = np.argmin(widths, axis=0)
    lo = np.take_along_axis(d, i[None, ...], 0)[0]
    hi = np.take_along_axis(d, (i + k - 1)[None, ...], 0)[0]
    return lo, hi


def summarize(frame: pd.DataFrame, prob: float = 0.95, max_lag: int = 50) -> pd.DataFrame:
    """Per-column mean, sd, IAT, ESS, HPD bounds and leading autocorrelations."""
    if len(frame) < MIN_DRAWS:
        raise ValueError(f"diagnostics need at least {MIN_DRAWS} draws, got {len(frame)}")
    rows = []
    for col in frame.columns:
        x = frame[col].to_numpy(float)
        lo, hi = hpd_interval(x, prob)
        tau = integrated_time(x)
        r = acf(x, max_lag)
        rows.append({"name": col, "mean": x.mean(), "sd": x.std(ddof=1), "iat": tau,
                     "ess": x.size / tau, "hpd_lo": float(lo), "hpd_hi": float(hi),
                     **{f"acf{lag}": r[lag] for lag in (1, 5, 10) if lag <= max_lag}})
    return pd.DataFrame(rows)


def diagnostics(output, prob: float = 0.95) -> pd.DataFrame:
    """Diagnostics for every scalar stored by a chain (constant columns report IAT 1)."""
    return summarize(output.to_frame(), prob)
