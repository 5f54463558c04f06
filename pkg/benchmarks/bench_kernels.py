"""Compare the compiled and numpy kernel backends on representative workloads.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--n N]

Prints one line per kernel with the best-of-N wall time of each backend,
the speedup and the largest absolute difference between their outputs.
"""
import argparse
import time

import numpy as np

from hotspots import kernels
from hotspots.coupling import GammaTube
from hotspots.geometry import DomainParams, build_quarter
from hotspots.spectral import first_mixed, level_curve, section_max


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_diff(a, b):
    if isinstance(a, dict):
        return max(max_diff(a[k], b[k]) for k in a)
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    both = np.isfinite(a) & np.isfinite(b)
    if not np.array_equal(np.isfinite(a), np.isfinite(b)):
        return float("inf")
    return float(np.abs(a[both] - b[both]).max()) if both.any() else 0.0


def workloads(n):
    dom = build_quarter(DomainParams(0.1, 0.01))
    pair, mesh = first_mixed(dom, 0.02)
    a = section_max(mesh, pair.vector, 1.0)
    gam = GammaTube.from_curve(mesh, pair.vector, level_curve(mesh, pair.vector, a))
    bi = dom.index
    loc = mesh.locator
    rng = np.random.default_rng(0)
    lo, hi = dom.vertices.min(0), dom.vertices.max(0)
    px = rng.uniform(lo[0], hi[0], n)
    py = rng.uniform(lo[1], hi[1], n)
    ids = np.arange(n, dtype=np.int64)
    ang = rng.uniform(0, 2 * np.pi, n)
    m = min(n, 2000)
    xx = np.zeros(m)
    xy = np.zeros(m)
    yx = np.zeros(m)
    yy = np.full(m, 0.1)
    dw = 3e-3 * rng.standard_normal((2, m))
    co = np.zeros(m, bool)
    vals = pair.vector
    return {
        "normals4": lambda k: k.normals4(7, ids, 3, 0),
        "project": lambda k: k.project(px, py, bi),
        "ray_first_hit": lambda k: k.ray_first_hit(np.full(n, 0.5), np.zeros(n), np.cos(ang), np.sin(ang), bi, 0.0),
        "locate": lambda k: k.locate(px, py, loc),
        "interpolate": lambda k: k.interpolate(px, py, vals, loc),
        "gamma_hit": lambda k: k.gamma_hit(px, py, gam),
        "mirror_step": lambda k: k.mirror_step(xx, xy, yx, yy, dw[0], dw[1], co, bi, 1e-5),
        "mirror_advance": lambda k: k.mirror_advance(xx[:200], xy[:200], yx[:200], yy[:200], co[:200],
                                                     ids[:200], np.zeros(200, np.int64), 0, 0, 1e-4, 500, bi,
                                                     gam, 1e-5, True, 1e-9, False),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--n", type=int, default=100_000)
    args = ap.parse_args()
    py = kernels.backend_module("numpy")
    try:
        cy = kernels.backend_module("cython")
    except ImportError as exc:
        print(f"compiled backend unavailable: {exc}")
        return
    print(f"{'kernel':<16}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, fn in workloads(args.n).items():
        tp, op = best_of(lambda: fn(py), args.repeat)
        tc, oc = best_of(lambda: fn(cy), args.repeat)
        print(f"{name:<16}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}{max_diff(op, oc):>14.3g}")


if __name__ == "__main__":
    main()
