"""Compare the compiled kernels against the NumPy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3]

Each kernel is timed on a representative workload with both backends and the
outputs are checked for agreement.  The compiled backend is skipped (with a
note) when the extension is not built.
"""

import argparse
import time

import numpy as np

from quadradon import forward as fwd
from quadradon import kernels
from quadradon import microlocal as ml
from quadradon.geometry import builtin_surface


def _workloads():
    geom = fwd.default_geometry(builtin_surface("nonconvex"))
    cx = np.repeat(geom.centers[:, 0], geom.radii.size)
    cy = np.repeat(geom.centers[:, 1], geom.radii.size)
    r = np.tile(geom.radii, len(geom.centers))
    splat = (cx, cy, r, (-100.0, -100.0), (200.0 / 128, 200.0 / 128), (128, 128),
             0.5 * 200.0 / 128)

    p = np.linspace(0.05, 0.95, 100)
    volterra = (p, 0.5, 5.0, 8, 128)

    grid = ml.cylinder_grid(16)
    x = grid.centers()
    x = x[(x[:, 0] ** 2 + x[:, 2] ** 2) < 1]
    coverage = (x, ml._phis(6.0), ml._heights(8), True, 18, 36)
    return {
        "splat_circles (402x199 circles, 128^2)": ("splat_circles", splat),
        "volterra_kernel_stack (100 pts, n<=8)": ("volterra_kernel_stack", volterra),
        "coverage_hits (16^3 spheroid, N=8)": ("coverage_hits", coverage),
    }


def _time(fn, args, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t)
    return best, out


def _agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.max(np.abs(np.asarray(x, float) - np.asarray(y, float)), initial=0.0))
               for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    py = kernels.backend_module("python")
    try:
        cy = kernels.backend_module("cython")
    except ImportError:
        cy = None
        print("compiled extension not built; timing the NumPy fallback only")

    print(f"{'kernel':42s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s} {'max diff':>9s}")
    for label, (name, wargs) in _workloads().items():
        t_py, out_py = _time(getattr(py, name), wargs, args.repeat)
        if cy is None:
            print(f"{label:42s} {t_py:11.3f} {'-':>11s} {'-':>8s} {'-':>9s}")
            continue
        t_cy, out_cy = _time(getattr(cy, name), wargs, args.repeat)
        diff = _agree(out_py, out_cy)
        print(f"{label:42s} {t_py:11.3f} {t_cy:11.3f} {t_py / t_cy:7.1f}x {diff:9.1e}")


if __name__ == "__main__":
    main()
