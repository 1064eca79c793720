#!/usr/bin/env python3
"""Numba vs numpy timings of the element and interpolation kernels.

Both implementations are called directly, so one process covers both
paths regardless of LAYERSTRIP_DISABLE_NUMBA.  Run with

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from layerstrip import kernels
from layerstrip._accel import HAVE_NUMBA
from layerstrip.mesh import build_mesh


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba disabled or missing; only the numpy path is timed")

    rng = np.random.default_rng(0)
    for nx, nz in [(130, 93), (180, 64), (260, 186)]:
        mesh = build_mesh(0, 20, 0, 15, nx, nz)
        n = mesh.node_count
        bx, bz, c = rng.normal(size=n), rng.normal(size=n), rng.uniform(1, 2, size=n)
        tabs = kernels.reference_tables(mesh.hx, mesh.hz, "blended")
        nodes = mesh.elements
        px = rng.uniform(0, 20, 50_000)
        pz = rng.uniform(0, 15, 50_000)
        vals = rng.normal(size=n)

        row = [f"{nx}x{nz}"]
        for name, call in [
            ("element", lambda u: kernels.element_matrices(nodes, *tabs, 1.0, bx, bz, c, use_numba=u)),
            ("interp", lambda u: kernels.interp_bilinear(vals, 0, 0, mesh.hx, mesh.hz, nx, nz,
                                                          px, pz, use_numba=u)),
        ]:
            t_np = best_of(lambda: call(False), args.repeat)
            line = f"{name} numpy {t_np * 1e3:8.2f} ms"
            if HAVE_NUMBA:
                call(True)  # compile outside the timing
                t_nb = best_of(lambda: call(True), args.repeat)
                diff = np.max(np.abs(call(True) - call(False)))
                line += f"  numba {t_nb * 1e3:8.2f} ms  speedup {t_np / t_nb:5.1f}x  max|diff| {diff:.1e}"
            row.append(line)
        print("\n  ".join(row))


if __name__ == "__main__":
    main()
