"""Per-location preprocessing of gridded time series.

Functions accept a 1-D series or an ``(M, N)`` field (time along axis 0)
and act on each column independently.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from ..kron_linalg import InvalidInput
from ..model import SpaceTimeGrid


def _window(pre_event_end: int | None, m: int) -> int:
    w = m if pre_event_end is None or pre_event_end <= 0 else int(pre_event_end)
    if w > m:
        raise InvalidInput(f"pre-event window {w} exceeds series length {m}")
    return w


def deseasonalize_monthly(series, period: int = 12, pre_event_end: int | None = None) -> np.ndarray:
    """Subtract the mean of each phase of the cycle, estimated before the event.

    A simple stand-in for a full seasonal-trend decomposition. Phase ``p``
    collects times ``p, p + period, ...``.
    """
    x = np.asarray(series, dtype=float)
    m = x.shape[0]
    if m < 2 * period:
        raise InvalidInput(f"need at least {2 * period} time points")
    w = _window(pre_event_end, m)
    if w < period:
        raise InvalidInput("pre-event window is shorter than one period")
    phase = np.arange(m) % period
    out = x.copy()
    for p in range(period):
        idx = np.flatnonzero(phase[:w] == p)
        out[phase == p] -= x[idx].mean(axis=0)
    return out


def _detrend_one(y: np.ndarray, w: int, alpha: float) -> tuple[np.ndarray, float, bool]:
    t = np.arange(1, y.size + 1, dtype=float)
    pre = y[:w]
    if np.ptp(pre) == 0:
        return y - pre.mean(), 0.0, False
    fit = stats.linregress(t[:w], pre)
    if np.isfinite(fit.pvalue) and fit.pvalue < alpha:
        return y - (fit.intercept + fit.slope * t), float(fit.slope), True
    return y - pre.mean(), float(fit.slope), False


def detrend_significant(series, pre_event_end: int, alpha: float = 0.05):
    """Remove a pre-event linear trend when its slope is significant.

    Fits an OLS line on ``1..pre_event_end``; if the two-sided slope test
    rejects at ``alpha`` the line is subtracted from the whole series,
    otherwise only the pre-event mean is. Either way the pre-event mean of
    the result is zero. Returns ``(series, slope, significant)``; for a field
    the last two are per-location arrays.
    """
    x = np.asarray(series, dtype=float)
    if pre_event_end < 3:
        raise InvalidInput("pre_event_end must be >= 3")
    w = _window(pre_event_end, x.shape[0])
    if x.ndim == 1:
        return _detrend_one(x, w, alpha)
    out = np.empty_like(x)
    slopes = np.empty(x.shape[1])
    sig = np.empty(x.shape[1], bool)
    for j in range(x.shape[1]):
        out[:, j], slopes[j], sig[j] = _detrend_one(x[:, j], w, alpha)
    return out, slopes, sig


def normalize_series(series, pre_event_end: int | None = None):
    """Divide by the pre-event sample standard deviation; returns ``(series, scale)``."""
    x = np.asarray(series, dtype=float)
    w = _window(pre_event_end, x.shape[0])
    if w < 2:
        raise InvalidInput("need at least two pre-event points")
    sd = x[:w].std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise InvalidInput("pre-event standard deviation is zero")
    return x / sd, sd


def zonal_mean(field, grid: SpaceTimeGrid) -> tuple[SpaceTimeGrid, np.ndarray]:
    """Average over longitude within each latitude band.

    The band grid puts every band at longitude 0; its origin is the band
    containing the original origin.
    """
    f = np.asarray(field, dtype=float).reshape(grid.m, grid.n)
    lat = grid.locations[:, 1]
    bands = np.unique(lat)
    if bands.size < 2:
        raise InvalidInput("zonal averaging needs at least two latitude bands")
    out = np.empty((grid.m, bands.size))
    for b, v in enumerate(bands):
        cols = lat == v
        if not cols.any():
            raise InvalidInput(f"empty latitude band {v}")
        out[:, b] = f[:, cols].mean(axis=1)
    locs = np.column_stack([np.zeros(bands.size), bands])
    origin = int(np.flatnonzero(bands == lat[grid.origin_index])[0])
    return SpaceTimeGrid(locs, grid.m, origin, grid.metric), out


def preprocess_field(field, pre_event_end: int, deseasonalize: bool = False, detrend: bool = True,
                     normalize: bool = True, period: int = 12):
    """Chain the optional steps; returns ``(field, scales)`` with unit scales if not normalizing."""
    y = np.asarray(field, dtype=float)
    if deseasonalize:
        y = deseasonalize_monthly(y, period, pre_event_end)
    if detrend:
        y, _, _ = detrend_significant(y, pre_event_end)
    scales = np.ones(y.shape[1] if y.ndim == 2 else 1)
    if normalize:
        y, scales = normalize_series(y, pre_event_end)
    return y, np.atleast_1d(scales)
