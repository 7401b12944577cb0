"""Mixing-quality score built from the autocorrelation of the energy trace.

The trace contains the energy of every visited state, including repeats
after rejections: rejection streaks are exactly what the autocorrelation
must see.

Conventions (exercised by the test suite):
* a constant trace (variance 0) has autocorrelation 1 at every lag, so a
  stuck chain scores 0 rather than raising mid-adaptation;
* otherwise lags at or beyond the trace length contribute 0 (empty-sum
  convention);
* the variance is the population variance, keeping r(0) = 1 exact.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import TraceTooShortError

# Minimum window length of the sliding-window criterion.
MIN_WINDOW = 25


class ObjectiveScore(NamedTuple):
    value: float
    window_len: int


def _as_trace(values) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 1:
        raise ValueError("energy trace must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(x)):
        raise ValueError("energy trace contains non-finite values")
    return x


def _raw_autocov(x: np.ndarray, max_lag: int) -> np.ndarray:
    """c[l] = sum_t (x_t - mean)(x_{t+l} - mean) for l = 0..max_lag."""
    n = x.shape[0]
    xc = x - x.mean()
    upto = min(max_lag, n - 1)
    if n > 512:
        # FFT autocovariance; direct convolution is O(n^2).
        m = 1 << int(np.ceil(np.log2(2 * n)))
        f = np.fft.rfft(xc, m)
        acov = np.fft.irfft(f * np.conj(f), m)[: upto + 1]
    else:
        acov = np.correlate(xc, xc, mode="full")[n - 1 : n + upto]
    out = np.zeros(max_lag + 1)
    out[: upto + 1] = acov
    return out


def autocorr_curve(values, max_lag: int) -> np.ndarray:
    """r(l) for l = 0..max_lag under the conventions above (vectorized)."""
    x = _as_trace(values)
    n = x.shape[0]
    var = float(x.var())
    if var == 0.0:
        return np.ones(max_lag + 1)
    lags = np.arange(max_lag + 1)
    denom = np.maximum(n - lags, 1) * var
    r = _raw_autocov(x, max_lag) / denom
    r[lags >= n] = 0.0
    return r


def autocorr(values, lag: int) -> float:
    """Lag-l autocorrelation of the trace.

    r(l) = (1 / ((n - l) var)) * sum_{t=1}^{n-l} (x_t - mean)(x_{t+l} - mean)
    with the mean and population variance of the whole trace.
    """
    if lag < 0:
        raise ValueError(f"lag must be >= 0, got {lag}")
    x = _as_trace(values)
    n = x.shape[0]
    var = float(x.var())
    if var == 0.0:
        return 1.0
    if lag >= n:
        return 0.0
    xc = x - x.mean()
    return float(xc[: n - lag] @ xc[lag:]) / ((n - lag) * var)


def acf_area_score(values, l_max: int) -> float:
    """1 - mean over lags 1..l_max of |r(l)|; larger means faster mixing."""
    if l_max < 1:
        raise ValueError(f"l_max must be >= 1, got {l_max}")
    r = autocorr_curve(values, l_max)
    return 1.0 - float(np.abs(r[1:]).mean())


def performance_criterion(last_energies) -> ObjectiveScore:
    """Sliding-window average of the area score over suffix windows.

    For each window length i = MIN_WINDOW..L the suffix of length i is
    scored with acf_area_score(suffix, i); the criterion is their mean.
    Raw products are maintained incrementally across windows, so the cost
    is one O(i) pass per window instead of one O(i log i) transform.
    """
    x = _as_trace(last_energies)
    length = x.shape[0]
    if length < MIN_WINDOW:
        raise TraceTooShortError(f"need at least {MIN_WINDOW} energies, got {length}")

    # Pre-centering by the global mean is a no-op for every window score
    # (each window subtracts its own mean) but avoids cancellation in the
    # prefix sums when energies sit far from zero.
    xc = x - x.mean()
    psum = np.concatenate(([0.0], np.cumsum(xc)))
    psq = np.concatenate(([0.0], np.cumsum(xc * xc)))

    # lag_products[l] = sum_t xc[t] * xc[t+l] over the current suffix.
    lag_products = np.zeros(length)
    seed = xc[length - MIN_WINDOW :]
    lag_products[:MIN_WINDOW] = np.correlate(seed, seed, mode="full")[MIN_WINDOW - 1 :]

    total = 0.0
    for i in range(MIN_WINDOW, length + 1):
        start = length - i
        if i > MIN_WINDOW:
            lag_products[:i] += xc[start] * xc[start:]
        mean = (psum[length] - psum[start]) / i
        var = (psq[length] - psq[start]) / i - mean * mean
        if var <= 0.0:
            # Constant window: every |r| = 1, score 0.
            total += 0.0
            continue
        lags = np.arange(1, i)
        counts = (i - lags).astype(np.float64)
        # sum over the window of x_t and of x_{t+l}, per lag
        head = psum[length - 1 : start : -1] - psum[start]
        tail = psum[length] - psum[start + 1 : length]
        cov = lag_products[1:i] - mean * (head + tail) + counts * mean * mean
        r = cov / (counts * var)
        # lag i (== window length) contributes 0 by the empty-sum convention
        total += 1.0 - float(np.abs(r).sum()) / i
    return ObjectiveScore(value=total / (length - MIN_WINDOW + 1), window_len=length)
