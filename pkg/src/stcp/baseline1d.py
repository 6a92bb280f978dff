"""At-most-one-change detection for a single series.

An exhaustive scan over split points with a Gaussian likelihood and a
modified-BIC penalty, for changes in mean, variance, or both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kron_linalg import InvalidInput

CHANGE_TYPES = ("mean", "var", "meanvar")
MIN_SEG = 2


@dataclass(frozen=True)
class CptResult:
    """Outcome at one location.

    ``changepoint`` is the last index (1-based) of the first segment, or
    ``None``; ``statistic`` is the gain at the best split minus its penalty.
    """

    location: int
    changepoint: int | None
    statistic: float
    change_type: str
    degenerate: bool = False


def mbic_penalty(k: np.ndarray, m: int) -> np.ndarray:
    """Modified BIC penalty for a split after ``k`` of ``m`` points."""
    k = np.asarray(k, float)
    return 3 * np.log(m) + np.log(k / m) + np.log(1 - k / m) + np.log(m)


def _log_var(rss: np.ndarray, n: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(rss / n)


def scan_gain(x: np.ndarray, change_type: str) -> tuple[np.ndarray, np.ndarray]:
    """Twice the log-likelihood gain of each admissible split.

    Returns ``(k, gain)`` with ``k`` running over ``MIN_SEG .. M - MIN_SEG``.
    """
    x = np.asarray(x, float)
    m = x.size
    k = np.arange(MIN_SEG, m - MIN_SEG + 1)
    c1, c2 = np.cumsum(x), np.cumsum(x * x)
    s1, q1 = c1[k - 1], c2[k - 1]
    s2, q2 = c1[-1] - s1, c2[-1] - q1
    n1, n2 = k.astype(float), (m - k).astype(float)
    mu = c1[-1] / m
    rss0 = max(c2[-1] - m * mu * mu, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        if change_type == "mean":
            rss1 = np.maximum(q1 - s1 * s1 / n1 + q2 - s2 * s2 / n2, 0.0)
            gain = m * (np.log(rss0) - np.log(rss1))
        elif change_type == "var":
            a = np.maximum(q1 - 2 * mu * s1 + n1 * mu * mu, 0.0)
            b = np.maximum(q2 - 2 * mu * s2 + n2 * mu * mu, 0.0)
            gain = m * np.log(rss0 / m) - n1 * _log_var(a, n1) - n2 * _log_var(b, n2)
        elif change_type == "meanvar":
            a = np.maximum(q1 - s1 * s1 / n1, 0.0)
            b = np.maximum(q2 - s2 * s2 / n2, 0.0)
            gain = m * np.log(rss0 / m) - n1 * _log_var(a, n1) - n2 * _log_var(b, n2)
        else:
            raise InvalidInput(f"change_type must be one of {CHANGE_TYPES}")
    return k, gain


def amoc_detect(series, change_type: str = "mean", location: int = 0,
                penalty: float | None = None) -> CptResult:
    """Best single split of ``series`` if its gain beats the penalty.

    ``penalty`` overrides the modified-BIC value with a constant.
    """
    x = np.asarray(series, float)
    if change_type not in CHANGE_TYPES:
        raise InvalidInput(f"change_type must be one of {CHANGE_TYPES}")
    if x.ndim != 1 or x.size < 2 * MIN_SEG:
        raise InvalidInput(f"need a 1-D series of length >= {2 * MIN_SEG}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("series contains non-finite values")
    m = x.size
    if np.ptp(x) == 0:
        return CptResult(location, None, 0.0, change_type, degenerate=True)
    k, gain = scan_gain(x, change_type)
    gain = np.where(np.isnan(gain), -np.inf, gain)
    j = int(np.argmax(gain))
    pen = mbic_penalty(k[j], m) if penalty is None else float(penalty)
    stat = float(gain[j] - pen)
    cp = int(k[j]) if stat > 0 else None
    return CptResult(location, cp, stat, change_type)
