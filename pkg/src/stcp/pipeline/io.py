"""Reading gridded data and writing traces, summaries and metrics."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from ..kron_linalg import InvalidInput
from ..mcmc import SCALAR_COLUMNS, ChainTrace
from ..model import SpaceTimeGrid

GRID_HEADER = ("lon", "lat", "time", "value")


class IngestionError(InvalidInput):
    """Input file is malformed or incomplete."""


def load_grid_csv(path, metric: str = "great-circle", origin_index: int = 0
                  ) -> tuple[SpaceTimeGrid, np.ndarray]:
    """Load a ``lon,lat,time,value`` table into a grid and an ``(M, N)`` field.

    Locations are ordered by ``(lon, lat)`` and times must be consecutive
    integers (relabelled ``1..M``), so row order in the file does not matter.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(h.strip() for h in rows[0]) != GRID_HEADER:
        raise IngestionError(f"{path}: header must be {','.join(GRID_HEADER)}")
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise IngestionError(f"{path}: non-numeric entry ({exc})") from exc
    if arr.size == 0 or arr.shape[1] != 4:
        raise IngestionError(f"{path}: expected 4 columns of data")
    if np.any(arr[:, 2] != np.round(arr[:, 2])):
        raise IngestionError(f"{path}: time must be an integer index")
    locs, loc_idx = np.unique(arr[:, :2], axis=0, return_inverse=True)
    times, t_idx = np.unique(arr[:, 2].astype(int), return_inverse=True)
    if np.any(np.diff(times) != 1):
        raise IngestionError(f"{path}: time indices are not consecutive")
    m, n = times.size, locs.shape[0]
    field = np.full((m, n), np.nan)
    seen = np.zeros((m, n), dtype=int)
    np.add.at(seen, (t_idx.ravel(), loc_idx.ravel()), 1)
    dup = np.argwhere(seen > 1)
    if dup.size:
        t, s = dup[0]
        raise IngestionError(f"{path}: duplicate cell (lon={locs[s, 0]:g}, lat={locs[s, 1]:g}, "
                             f"time={times[t]})")
    field[t_idx.ravel(), loc_idx.ravel()] = arr[:, 3]
    gaps = np.argwhere(seen == 0)
    if gaps.size:
        listed = ", ".join(f"({locs[s, 0]:g},{locs[s, 1]:g},{times[t]})" for t, s in gaps[:10])
        raise IngestionError(f"{path}: {len(gaps)} missing cells (lon,lat,time): {listed}")
    if not np.all(np.isfinite(field)):
        raise IngestionError(f"{path}: non-finite values")
    return SpaceTimeGrid(locs, m, origin_index, metric), field


def write_grid_csv(path, grid: SpaceTimeGrid, field: np.ndarray) -> None:
    field = np.asarray(field, float).reshape(grid.m, grid.n)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for s, (lon, lat) in enumerate(grid.locations):
            for t in range(grid.m):
                w.writerow([repr(float(lon)), repr(float(lat)), t + 1, repr(float(field[t, s]))])


def resolve_origin(text: str, grid: SpaceTimeGrid) -> int:
    """Origin given as a location index or as ``lon,lat`` (nearest location)."""
    text = str(text).strip()
    if "," in text:
        lon, lat = (float(v) for v in text.split(","))
        d = np.hypot(grid.locations[:, 0] - lon, grid.locations[:, 1] - lat)
        return int(np.argmin(d))
    i = int(text)
    if not 0 <= i < grid.n:
        raise InvalidInput(f"origin index {i} out of range")
    return i


def trace_header(n: int) -> list[str]:
    return (["iteration", "chain", *SCALAR_COLUMNS] + [f"tau_{i}" for i in range(n)]
            + [f"gamma0_{i}" for i in range(n)])


def write_trace_csv(path, trace: ChainTrace) -> None:
    """One row per retained draw; floats use ``repr`` so output is reproducible."""
    n = trace.tau.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(n))
        for k in range(len(trace)):
            vals = np.concatenate([trace.scalars[k], trace.tau[k], trace.gamma0[k]])
            w.writerow([int(trace.iterations[k]), int(trace.chain[k])] + [repr(float(v)) for v in vals])


def write_trace_meta(path, trace: ChainTrace) -> None:
    meta = {"m": trace.m, "variance_mode": trace.variance_mode, "burn_in": trace.burn_in,
            "thin": trace.thin, "deviance_at_mean": trace.deviance_at_mean,
            "acceptance": {k: np.asarray(v).tolist() for k, v in trace.acceptance.items()}}
    Path(path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")


def read_trace(csv_path, meta_path) -> ChainTrace:
    """Rebuild a trace written by :func:`write_trace_csv` and :func:`write_trace_meta`."""
    meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestionError(f"{csv_path}: empty trace file")
    head = rows[0]
    n = sum(1 for h in head if h.startswith("tau_"))
    if head != trace_header(n):
        raise IngestionError(f"{csv_path}: unexpected trace header")
    body = np.array([[float(v) for v in r] for r in rows[1:] if r])
    if body.size == 0:
        raise IngestionError(f"{csv_path}: trace has no draws")
    k = len(SCALAR_COLUMNS)
    return ChainTrace(meta["m"], meta["variance_mode"], body[:, 0].astype(int),
                      body[:, 1].astype(int), body[:, 2:2 + k], body[:, 2 + k:2 + k + n],
                      body[:, 2 + k + n:], {}, {kk: np.asarray(v) for kk, v in meta["acceptance"].items()},
                      meta["burn_in"], meta["thin"], meta["deviance_at_mean"])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")
