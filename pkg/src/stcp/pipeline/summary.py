"""Posterior summaries per location and for the global parameters."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..kron_linalg import InvalidInput
from ..mcmc import SCALAR_COLUMNS, ChainTrace
from ..model import SpaceTimeGrid

MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")


def calendar_label(index: int, start: str = "") -> str:
    """Label time ``index`` (1-based) as ``Mon YYYY`` if ``start`` is ``YYYY-MM``."""
    if not start:
        return str(index)
    try:
        year, month = (int(p) for p in start.split("-")[:2])
    except ValueError as exc:
        raise InvalidInput(f"calendar start must be YYYY-MM, got {start!r}") from exc
    k = (month - 1) + (index - 1)
    return f"{MONTHS[k % 12]} {year + k // 12}"


@dataclass
class PosteriorSummary:
    per_location: list
    global_params: dict
    dic: float | None
    p_d: float | None = None

    def to_dict(self) -> dict:
        return {"per_location": self.per_location, "global": self.global_params, "dic": self.dic,
                "p_d": self.p_d}


def _interval(x: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    a = (1 - level) / 2
    lo, hi = np.quantile(x, [a, 1 - a])
    return float(lo), float(hi)


def summarize_posterior(trace: ChainTrace, grid: SpaceTimeGrid, scales=None,
                        calendar_start: str = "") -> PosteriorSummary:
    """Changepoint modes, no-change probabilities, intervals and a parameter table.

    ``scales`` (per location) multiplies the ``gamma0`` draws back to the
    original units.
    """
    if len(trace) == 0:
        raise InvalidInput("empty trace")
    m = trace.m
    n = trace.tau.shape[1]
    sc = np.ones(n) if scales is None else np.broadcast_to(np.asarray(scales, float), (n,))
    mode = trace.tau_mode()
    tau = np.minimum(m, trace.tau)
    rows = []
    for s in range(n):
        p_none = float(np.mean(tau[:, s] >= m))
        lo, hi = _interval(tau[:, s])
        g = trace.gamma0[:, s] * sc[s]
        glo, ghi = _interval(g)
        has = int(mode[s]) < m
        rows.append({
            "lon": float(grid.locations[s, 0]), "lat": float(grid.locations[s, 1]),
            "cp_mode": int(mode[s]) if has else None,
            "cp_label": calendar_label(int(mode[s]), calendar_start) if has else "none",
            "p_no_cp": p_none, "ci_low": lo, "ci_high": hi,
            "gamma0_mean": float(g.mean()), "gamma0_low": glo, "gamma0_high": ghi,
        })
    table = {}
    for name in SCALAR_COLUMNS:
        if name == "deviance":
            continue
        x = trace.column(name)
        lo, hi = _interval(x)
        table[name] = {"mean": float(x.mean()), "ci_low": lo, "ci_high": hi}
    dic = p_d = None
    if trace.deviance_at_mean is not None:
        dic, p_d = trace.dic()
    return PosteriorSummary(rows, table, dic, p_d)
