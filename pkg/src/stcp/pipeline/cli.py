"""Command-line entry point: ``stcp {fit,simulate,compare,summarize,generate,demo}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..mcmc import run_chains
from ..simgen import SimConfig, default_settings, generate_dataset, run_study
from .config import RunConfig, load_config
from .io import (
    load_grid_csv,
    read_trace,
    resolve_origin,
    write_grid_csv,
    write_json,
    write_trace_csv,
    write_trace_meta,
)
from .preprocess import preprocess_field, zonal_mean
from .summary import summarize_posterior

log = logging.getLogger("stcp")
MODES = ("equal", "increase", "decrease")


def _out(rc: RunConfig) -> Path:
    p = Path(rc.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def prepare_data(rc: RunConfig):
    """Load, reduce and preprocess the input field; returns ``(grid, y, scales)``."""
    if not rc.data_path:
        raise ValueError("no input data: set [data] path or pass --data")
    grid, y = load_grid_csv(rc.data_path, rc.metric)
    grid = grid.with_origin(resolve_origin(rc.origin, grid))
    if rc.zonal:
        grid, y = zonal_mean(y, grid)
    scales = np.ones(grid.n)
    if rc.deseasonalize or rc.detrend or rc.normalize:
        if rc.pre_event_end <= 0:
            raise ValueError("preprocessing needs [data] pre_event_end")
        y, scales = preprocess_field(y, rc.pre_event_end, rc.deseasonalize, rc.detrend, rc.normalize)
    return grid, y, scales


def cmd_fit(rc: RunConfig) -> int:
    grid, y, scales = prepare_data(rc)
    out = _out(rc)
    hyper = rc.hyperparams(grid.m)
    modes = MODES if rc.variance_mode == "all" else (rc.variance_mode,)
    fits = {}
    for mode in modes:
        log.info("fitting %s-variance model (%d chains x %d iterations)", mode, rc.chains,
                 rc.iterations)
        tr = run_chains(y, grid, rc.sampler_config(mode), hyper, rc.seed, rc.chains)
        suffix = "" if len(modes) == 1 else f"_{mode}"
        write_trace_csv(out / f"trace{suffix}.csv", tr)
        write_trace_meta(out / f"trace{suffix}.json", tr)
        fits[mode] = tr
    dics = {mode: tr.dic()[0] for mode, tr in fits.items()}
    best = min(dics, key=dics.get)
    if len(modes) > 1:
        write_json(out / "dic.json", {"dic": dics, "selected": best})
    summary = summarize_posterior(fits[best], grid, scales, rc.calendar_start).to_dict()
    summary["variance_mode"] = best
    write_json(out / "summary.json", summary)
    log.info("selected %s-variance model; DIC %.2f", best, dics[best])
    return 0


def study_settings(rc: RunConfig) -> list[SimConfig]:
    base = SimConfig(side=rc.side, m=rc.m, spacing=rc.spacing, replications=rc.replications,
                     seed=rc.seed)
    if rc.gamma0 or rc.sigma2_sq:
        g0s = rc.gamma0 or [base.gamma0]
        s2s = rc.sigma2_sq or [base.sigma1_sq]
        return [replace(base, gamma0=g, sigma2_sq=s, name=f"gamma0={g:g},sigma2_sq={s:g}")
                for g in g0s for s in s2s]
    return [replace(base, gamma0=c.gamma0, sigma2_sq=c.sigma2_sq, name=c.name)
            for c in default_settings(rc.study)]


def _study(rc: RunConfig, baseline: bool) -> int:
    out = _out(rc)
    settings = study_settings(rc)
    sc = rc.sampler_config("equal")

    def progress(rows):
        r = rows[0]
        log.info("%s replication %d: rmse %.3f", r["setting"], r["replication"], r["rmse"])

    report = run_study(settings, sc, baseline_on=baseline, hyper=rc.hyperparams(rc.m),
                       workers=rc.workers, progress=progress)
    (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
    return 0


def cmd_simulate(rc: RunConfig) -> int:
    return _study(rc, baseline=False)


def cmd_compare(rc: RunConfig) -> int:
    return _study(rc, baseline=True)


def cmd_generate(rc: RunConfig) -> int:
    """Write one synthetic data set and its true changepoints."""
    out = _out(rc)
    cfg = SimConfig(side=rc.side, m=rc.m, spacing=rc.spacing,
                    gamma0=rc.gamma0[0] if rc.gamma0 else 3.0,
                    sigma2_sq=rc.sigma2_sq[0] if rc.sigma2_sq else 1.0)
    y, truth = generate_dataset(cfg, np.random.default_rng(rc.seed))
    write_grid_csv(out / "data.csv", truth.grid, y)
    write_json(out / "truth.json", {
        "origin_index": truth.grid.origin_index,
        "origin": [float(v) for v in truth.grid.locations[truth.grid.origin_index]],
        "locations": truth.grid.locations.tolist(),
        "tau": [float(v) for v in truth.cp.tau],
        "has_cp": [bool(v) for v in truth.has_cp],
    })
    return 0


def cmd_summarize(rc: RunConfig, trace_dir: str) -> int:
    grid, _, scales = prepare_data(rc)
    d = Path(trace_dir)
    tr = read_trace(d / "trace.csv", d / "trace.json")
    write_json(_out(rc) / "summary.json",
               summarize_posterior(tr, grid, scales, rc.calendar_start).to_dict())
    return 0


def cmd_demo(rc: RunConfig, seeds: int, iterations: int | None = None,
             burn_in: int | None = None) -> int:
    """Globe-grid demonstration of mode selection and the zonal workflow."""
    from .demo import DEMO_BURN_IN, DEMO_ITERATIONS, run_demo

    result = run_demo(range(rc.seed, rc.seed + seeds), iterations or DEMO_ITERATIONS,
                      burn_in or DEMO_BURN_IN)
    write_json(_out(rc) / "demo.json", result)
    log.info("equal-variance model selected for %d of %d seeds", result["equal_wins"], seeds)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stcp", description="Spatially varying changepoint detection.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--seed", type=int, help="master random seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")

    f = sub.add_parser("fit", help="fit the model to a lon,lat,time,value CSV")
    common(f)
    f.add_argument("--data", help="input CSV (overrides [data] path)")
    f.add_argument("--chains", type=int, help="number of independent chains")
    f.add_argument("--variance-mode", choices=MODES + ("all",))
    f.add_argument("--iterations", type=int)
    f.add_argument("--burn-in", type=int)
    f.add_argument("--pin-beta", action="store_true", help="fix beta = 0")

    for name, text in (("simulate", "simulation study, spatiotemporal model only"),
                       ("compare", "simulation study against the per-location baseline")):
        s = sub.add_parser(name, help=text)
        common(s)
        s.add_argument("--replications", type=int)
        s.add_argument("--iterations", type=int)
        s.add_argument("--burn-in", type=int)
        s.add_argument("--workers", type=int)

    g = sub.add_parser("generate", help="write one synthetic data set")
    common(g)

    d = sub.add_parser("demo", help="globe-grid demonstration (mode selection, zonal workflow)")
    common(d)
    d.add_argument("--seeds", type=int, default=5, help="number of data sets for mode selection")
    d.add_argument("--iterations", type=int)
    d.add_argument("--burn-in", type=int)

    s = sub.add_parser("summarize", help="summarize a saved trace")
    common(s)
    s.add_argument("--data", help="input CSV the trace was fitted to")
    s.add_argument("--trace-dir", required=True, help="directory holding trace.csv and trace.json")
    return p


def apply_overrides(rc: RunConfig, args: argparse.Namespace) -> RunConfig:
    mapping = {"seed": "seed", "out": "out_dir", "data": "data_path", "chains": "chains",
               "variance_mode": "variance_mode", "iterations": "iterations",
               "burn_in": "burn_in", "replications": "replications", "workers": "workers"}
    for arg, attr in mapping.items():
        v = getattr(args, arg, None)
        if v is not None:
            setattr(rc, attr, v)
    if getattr(args, "pin_beta", False):
        rc.pin_beta = True
    return rc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        rc = apply_overrides(load_config(args.config), args)
        if args.command == "fit":
            return cmd_fit(rc)
        if args.command == "simulate":
            return cmd_simulate(rc)
        if args.command == "compare":
            return cmd_compare(rc)
        if args.command == "generate":
            return cmd_generate(rc)
        if args.command == "demo":
            return cmd_demo(rc, args.seeds, args.iterations, args.burn_in)
        return cmd_summarize(rc, args.trace_dir)
    except (ValueError, ArithmeticError, OSError) as exc:
        print(f"stcp {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
