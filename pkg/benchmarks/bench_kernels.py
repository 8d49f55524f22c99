"""Compiled vs pure-Python T^2 Heun kernel on a Taylor-Green drift.

    python benchmarks/bench_kernels.py [--samples 20] [--grid 32] [--steps 30] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mnsl.flow import ExactSpectralDrift, FlowConfig, NoiseModel
from mnsl.kernels import implementations
from mnsl.quadrature import torus_grid
from mnsl.rng import increments_batch
from mnsl.spectral import taylor_green_exact


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--grid", type=int, default=32)
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    nu, dt = 0.1, 1e-2
    cfg = FlowConfig(dt, dt * args.steps, 2024, args.samples)
    drift = ExactSpectralDrift(lambda t: taylor_green_exact(t, nu))
    noise = NoiseModel.constant(nu)
    x0 = torus_grid(args.grid).nodes
    ts = dt * np.arange(args.steps + 1)
    k, A, B, mean, _ = drift.tables(ts)
    dW = noise.sigma * increments_batch(2024, np.arange(args.samples), 2, args.steps, dt)
    record = np.array([args.steps])

    impls = implementations()
    results = {}
    for name, fn in impls.items():
        best = np.inf
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            X, J = fn(x0, dW, k, A, B, mean, dt, record)
            best = min(best, time.perf_counter() - t0)
        results[name] = (best, X, J)
        print(f"{name:>9}: {best:8.4f} s  ({args.samples} samples x {x0.shape[0]} points x {args.steps} steps)")
    if "compiled" in results:
        tp, Xp, Jp = results["python"]
        tc, Xc, Jc = results["compiled"]
        gap = max(float(np.max(np.abs(Xp - Xc))), float(np.max(np.abs(Jp - Jc))))
        print(f"  speedup: {tp / tc:6.1f}x   max |python - compiled| = {gap:.2e}")
    else:
        print("compiled extension not built; only the fallback was timed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
