"""Compare the compiled and pure-Python Metropolis kernels.

Times each kernel on the default simulation size (11 x 11 lattice, 61 time
points) plus a handful of full sampler sweeps, and checks that both backends
return the same arrays.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--sweeps 20]
"""

from __future__ import annotations

import argparse
import time
from dataclasses import replace

import numpy as np

from stcp import kernels
from stcp.mcmc import SamplerConfig, initialize, pcg_sweep
from stcp.simgen import SimConfig, generate_dataset


def _setup(seed: int = 0):
    cfg = SimConfig(gamma0=3.0, sigma2_sq=3.0)
    y, truth = generate_dataset(cfg, np.random.default_rng(seed))
    state = initialize(y, truth.grid, SamplerConfig(variance_mode="increase"), rng=seed)
    return y, state


def _kernel_cases(y, st):
    m, n = st.m, st.n
    rng = np.random.default_rng(1)
    z, log_u = rng.standard_normal(n), np.log(rng.random(n))
    prec = st.c_delta.prec
    g0 = np.full(n, 2.0)
    g1 = np.zeros(n)
    eps = np.ascontiguousarray(rng.standard_normal((m, n)) * 0.3)
    base = np.ascontiguousarray(y - st.latent.u)
    sd = np.full(n, 0.8)
    free = st.free.astype(np.uint8)
    ku = st.ku
    qt, qs = np.ascontiguousarray(ku.temporal_eig.q), np.ascontiguousarray(ku.spatial_eig.q)
    dinv = np.ascontiguousarray(1.0 / ku.diag_plus(1.0))
    rt0 = np.ascontiguousarray(ku.whiten(base))
    basis = np.ascontiguousarray(st.cp.post.astype(float))
    cand = np.arange(1, m + 1, dtype=float)
    delta = st.delta()

    def delta_cond(k):
        ld, pw, acc = st.log_delta.copy(), prec @ st.delta_resid(), np.zeros(n, np.uint8)
        k.delta_sweep_conditional(ld, free, z, log_u, sd, prec, pw, 1.0, st.cp.tau0, m, 0.0,
                                  g0, g1, eps, 1, base, 1.0, acc)
        return ld

    def delta_int(k):
        ld, pw, acc = st.log_delta.copy(), prec @ st.delta_resid(), np.zeros(n, np.uint8)
        rt = rt0.copy()
        k.delta_sweep_integrated(ld, free, z, log_u, sd, prec, pw, 1.0, st.cp.tau0, m, 0.0,
                                 g0, g1, eps, 1, qt, qs, rt, dinv, acc)
        return ld

    def delta_col(k):
        ld, pw, acc = st.log_delta.copy(), prec @ st.delta_resid(), np.zeros(n, np.uint8)
        k.delta_sweep_collapsed(ld, free, z, log_u, sd, prec, pw, 1.0, st.cp.tau0, m, 0.0,
                                g0, g1, base, 1.0, 2.0, 1, acc)
        return ld

    def effects(k):
        x, pw, acc = np.zeros(n), np.zeros(n), np.zeros(n, np.uint8)
        k.re_sweep(x, z, log_u, np.full(n, 0.1), st.c_g0.prec, pw, 0.5, basis, base.copy(),
                   1.0, acc)
        return x

    def tau0(k):
        out = np.empty((m, cand.size, n))
        k.tau0_residuals(cand, delta, base, 0.0, g0, g1, eps, 1, out)
        return out

    return {"delta_sweep_conditional": delta_cond, "delta_sweep_integrated": delta_int,
            "delta_sweep_collapsed": delta_col, "re_sweep": effects, "tau0_residuals": tau0}


def _time(fn, repeat: int) -> float:
    fn()
    t = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t) / repeat


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--sweeps", type=int, default=20)
    args = ap.parse_args(argv)

    backends = kernels.available()
    if "cython" not in backends:
        print("compiled kernels not built; only the Python backend is available")
    y, st = _setup()
    cases = _kernel_cases(y, st)
    print(f"{'kernel':26s}" + "".join(f"{b:>12s}" for b in backends) + "    speedup  max|diff|")
    for name, case in cases.items():
        times = {b: _time(lambda: case(kernels.get(b)), args.repeat) for b in backends}
        outs = {b: case(kernels.get(b)) for b in backends}
        line = f"{name:26s}" + "".join(f"{times[b] * 1e3:10.3f}ms" for b in backends)
        if len(backends) == 2:
            diff = float(np.max(np.abs(outs["cython"] - outs["python"])))
            line += f"  {times['python'] / times['cython']:8.1f}x  {diff:.1e}"
        print(line)

    print(f"\nfull sweeps ({args.sweeps} per backend, increase mode, N=121, M=61)")
    for b in backends:
        _, s = _setup()
        s.config = replace(s.config, backend=b)
        pcg_sweep(s, y)
        t = time.perf_counter()
        for _ in range(args.sweeps):
            pcg_sweep(s, y)
        print(f"  {b:8s} {(time.perf_counter() - t) / args.sweeps * 1e3:8.2f} ms/sweep")


if __name__ == "__main__":
    main()
