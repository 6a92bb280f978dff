"""Synthetic data, detection metrics and the simulation-study driver.

Data come from the full model on a square lattice: a log-normal diffusion
field fixes the changepoints, the mean shifts by ``gamma0`` afterwards, and
the observations add a separable space-time process plus white noise whose
variance moves from ``sigma1_sq`` to ``sigma2_sq`` at the changepoint.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .baseline1d import amoc_detect
from .kron_linalg import InvalidInput, exp_correlation, time_distance
from .model import ChangepointField, SpaceTimeGrid, build_tau, design_matrix_X

METRIC_FIELDS = ("setting", "replication", "method", "fpr", "fnr", "rmse", "coverage", "ci_length")
MIN_CI_DRAWS = 40


@dataclass
class SimConfig:
    side: int = 11
    spacing: float = 1.0
    m: int = 61
    tau0_true: float = 18.0
    beta_true: tuple = (1.5, 1.0)
    sigma_Delta_sq: float = 1.0
    psi_Delta: float = 0.5
    alpha0: float = 0.0
    gamma0: float = 3.0
    gamma1: float = 0.0
    sigma1_sq: float = 1.0
    sigma2_sq: float = 1.0
    sigma_U_sq: float = 1.0
    phi_U: float = 1.5
    psi_U: float = 2.0
    replications: int = 100
    seed: int | None = 0
    name: str = ""

    def check(self) -> None:
        if self.m < 2 or self.side < 2:
            raise InvalidInput("need M >= 2 and a lattice side >= 2")
        for k in ("sigma_Delta_sq", "psi_Delta", "phi_U", "psi_U", "spacing"):
            if not getattr(self, k) > 0:
                raise InvalidInput(f"{k} must be positive")
        for k in ("sigma1_sq", "sigma2_sq", "sigma_U_sq"):
            if getattr(self, k) < 0:
                raise InvalidInput(f"{k} must be nonnegative")

    @property
    def label(self) -> str:
        return self.name or f"gamma0={self.gamma0:g},sigma2_sq={self.sigma2_sq:g}"

    def grid(self, origin_index: int = 0) -> SpaceTimeGrid:
        g = SpaceTimeGrid.lattice(self.side, self.m, origin_index)
        return replace(g, locations=g.locations * self.spacing)


@dataclass
class SimTruth:
    cp: ChangepointField
    has_cp: np.ndarray
    grid: SpaceTimeGrid


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def add(self, setting, replication, method, fpr, fnr, rmse, coverage=None, ci_length=None):
        self.rows.append(dict(setting=setting, replication=replication, method=method, fpr=fpr,
                              fnr=fnr, rmse=rmse, coverage=coverage, ci_length=ci_length))

    def values(self, setting: str, method: str, metric: str) -> np.ndarray:
        """Defined (non-missing) values of one metric."""
        v = [r[metric] for r in self.rows
             if r["setting"] == setting and r["method"] == method and r[metric] is not None]
        return np.asarray(v, dtype=float)

    def median(self, setting: str, method: str, metric: str) -> float:
        v = self.values(setting, method, metric)
        return float(np.median(v)) if v.size else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in self.rows:
            w.writerow(["" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                        for k in METRIC_FIELDS])
        return buf.getvalue()


def _noise_cholesky(cfg: SimConfig, grid: SpaceTimeGrid):
    ds = grid.distances()
    ls = np.linalg.cholesky(exp_correlation(ds, cfg.psi_U) + 1e-10 * np.eye(grid.n))
    lt = np.linalg.cholesky(exp_correlation(time_distance(cfg.m), cfg.phi_U) + 1e-10 * np.eye(cfg.m))
    ld = np.linalg.cholesky(exp_correlation(ds, cfg.psi_Delta) + 1e-10 * np.eye(grid.n))
    return lt, ls, ld


def generate_dataset(cfg: SimConfig, rng) -> tuple[np.ndarray, SimTruth]:
    """Draw one ``(M, N)`` data set and its true changepoint field."""
    cfg.check()
    rng = np.random.default_rng(rng)
    origin = int(rng.integers(cfg.side * cfg.side))
    return simulate_on_grid(cfg, cfg.grid(origin), rng)


def simulate_on_grid(cfg: SimConfig, grid: SpaceTimeGrid, rng) -> tuple[np.ndarray, SimTruth]:
    """Draw data on an arbitrary grid; ``cfg.side`` and ``cfg.m`` are ignored.

    Distances follow the grid's metric, so the decay parameters are in the
    same units (radians for great-circle grids).
    """
    rng = np.random.default_rng(rng)
    cfg = replace(cfg, m=grid.m)
    n, origin = grid.n, grid.origin_index
    lt, ls, ld = _noise_cholesky(cfg, grid)
    x = design_matrix_X(grid)
    z = ld @ rng.standard_normal(n)
    log_delta = x @ np.asarray(cfg.beta_true, float) + math.sqrt(cfg.sigma_Delta_sq) * z
    delta = np.exp(log_delta)
    delta[origin] = 0.0
    if cfg.gamma0 == 0 and cfg.gamma1 == 0 and cfg.sigma2_sq == cfg.sigma1_sq:
        delta = np.full(n, np.inf)
    cp = build_tau(min(cfg.tau0_true, cfg.m), delta, cfg.m)
    lag = cp.lag()
    mu = cfg.alpha0 + cp.post * cfg.gamma0 + lag * cfg.gamma1
    u = math.sqrt(cfg.sigma_U_sq) * (lt @ rng.standard_normal((cfg.m, n)) @ ls.T)
    sd = np.where(cp.post, math.sqrt(cfg.sigma2_sq), math.sqrt(cfg.sigma1_sq))
    y = mu + u + sd * rng.standard_normal((cfg.m, n))
    return y, SimTruth(cp, cp.tau < cfg.m, grid)


def fpr(truth, detected) -> float | None:
    """Share of detected locations without a true changepoint; ``None`` if none detected."""
    truth, detected = np.asarray(truth, bool), np.asarray(detected, bool)
    if truth.shape != detected.shape:
        raise InvalidInput("truth and detections differ in length")
    k = int(detected.sum())
    return None if k == 0 else float(np.sum(detected & ~truth)) / k


def fnr(truth, detected) -> float | None:
    """Share of undetected locations with a true changepoint; ``None`` if all detected."""
    truth, detected = np.asarray(truth, bool), np.asarray(detected, bool)
    if truth.shape != detected.shape:
        raise InvalidInput("truth and detections differ in length")
    k = int((~detected).sum())
    return None if k == 0 else float(np.sum(~detected & truth)) / k


def rmse_tau(truth_tau, est_tau, m: int) -> float:
    t = np.minimum(m, np.asarray(truth_tau, float))
    e = np.minimum(m, np.asarray(est_tau, float))
    return float(np.sqrt(np.mean((t - e) ** 2)))


def coverage_and_length(tau_draws, truth_tau, m: int, level: float = 0.95) -> tuple[float, float]:
    """Equal-tailed interval coverage and mean length over locations.

    ``tau_draws`` is ``(draws, N)``; intervals use the continuous
    ``min(M, tau)`` samples.
    """
    d = np.minimum(m, np.asarray(tau_draws, float))
    if d.ndim != 2 or d.shape[0] < MIN_CI_DRAWS:
        raise InvalidInput(f"need at least {MIN_CI_DRAWS} posterior draws per location")
    a = (1 - level) / 2
    lo, hi = np.quantile(d, [a, 1 - a], axis=0)
    t = np.minimum(m, np.asarray(truth_tau, float))
    cover = (t >= lo) & (t <= hi)
    return float(cover.mean()), float(np.mean(hi - lo))


def baseline_change_type(cfg: SimConfig) -> str:
    if cfg.sigma2_sq == cfg.sigma1_sq:
        return "mean"
    return "var" if cfg.gamma0 == 0 else "meanvar"


def default_settings(study: str = "mean") -> list[SimConfig]:
    """Settings of the mean-shift study or of the mean/variance study."""
    if study == "mean":
        return [SimConfig(gamma0=g, name=f"mean:gamma0={g:g}") for g in (0.0, 1.5, 2.0, 3.0)]
    if study == "variance":
        return [SimConfig(gamma0=g, sigma2_sq=s, name=f"var:gamma0={g:g},sigma2_sq={s:g}")
                for g in (0.0, 2.0) for s in (3.0, 5.0)]
    raise InvalidInput(f"unknown study {study!r}")


def sampler_mode(cfg: SimConfig) -> str:
    if cfg.sigma2_sq > cfg.sigma1_sq:
        return "increase"
    if cfg.sigma2_sq < cfg.sigma1_sq:
        return "decrease"
    return "equal"


def replication_seeds(seed, count: int) -> list[np.random.SeedSequence]:
    """Per-replication streams: child ``r`` of ``SeedSequence(seed)``."""
    return np.random.SeedSequence(seed).spawn(count)


def run_replication(cfg: SimConfig, sampler_config, seed, baseline_on: bool = True,
                    hyper=None, replication: int = 0) -> list[dict]:
    """Generate one data set, fit it, and return its metric rows."""
    from .mcmc import run_chain

    data_seed, chain_seed = np.random.SeedSequence(seed).spawn(2) if not isinstance(
        seed, np.random.SeedSequence) else seed.spawn(2)
    y, truth = generate_dataset(cfg, np.random.default_rng(data_seed))
    m = cfg.m
    sc = replace(sampler_config, variance_mode=sampler_mode(cfg))
    trace = run_chain(y, truth.grid, sc, hyper, np.random.default_rng(chain_seed))
    est = trace.tau_mode()
    det = est < m
    cov, length = coverage_and_length(trace.tau, truth.cp.tau, m)
    out = MetricReport()
    out.add(cfg.label, replication, "ST", fpr(truth.has_cp, det), fnr(truth.has_cp, det),
            rmse_tau(truth.cp.tau, est, m), cov, length)
    if baseline_on:
        ct = baseline_change_type(cfg)
        res = [amoc_detect(y[:, i], ct, location=i) for i in range(truth.grid.n)]
        est1 = np.array([m if r.changepoint is None else r.changepoint for r in res], float)
        det1 = est1 < m
        out.add(cfg.label, replication, "1D", fpr(truth.has_cp, det1), fnr(truth.has_cp, det1),
                rmse_tau(truth.cp.tau, est1, m))
    return out.rows


def _replication_job(args):
    return run_replication(*args)


def run_study(settings, sampler_config, baseline_on: bool = True, hyper=None,
              workers: int = 1, progress=None) -> MetricReport:
    """Run every replication of every setting.

    Replication ``r`` of a setting uses child ``r`` of ``SeedSequence(cfg.seed)``;
    its data and chain streams are the two children of that seed.
    """
    if isinstance(settings, SimConfig):
        settings = [settings]
    jobs = []
    for cfg in settings:
        cfg.check()
        for r, s in enumerate(replication_seeds(cfg.seed, cfg.replications)):
            jobs.append((cfg, sampler_config, s, baseline_on, hyper, r))
    report = MetricReport()
    if workers > 1 and len(jobs) > 1:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(workers) as ex:
            results = ex.map(_replication_job, jobs)
            for rows in results:
                report.rows.extend(rows)
                if progress:
                    progress(rows)
    else:
        for job in jobs:
            rows = _replication_job(job)
            report.rows.extend(rows)
            if progress:
                progress(rows)
    return report
