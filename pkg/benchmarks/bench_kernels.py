"""Compiled vs numpy-fallback geometry kernels.

    python3 benchmarks/bench_kernels.py [--resolution 32] [--subdivisions 64]

Times nearest-triangle distance and winding numbers on grid nodes around a
triangulated torus and checks that both backends agree.
"""

import argparse
import time

import numpy as np

from dideeponet import fem, geometry, kernels


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--resolution", type=int, default=24)
    ap.add_argument("--subdivisions", type=int, default=48)
    ap.add_argument("--winding-points", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args(argv)

    spec = geometry.build_catalog(0)[50]
    tris = geometry.triangulate(spec, args.subdivisions).triangle_array()
    pts = fem.node_coordinates(args.resolution)
    wpts = pts[np.random.default_rng(0).choice(len(pts), args.winding_points, replace=False)]
    bvh = kernels.build_bvh(tris)
    print(f"{spec.kind}: {len(tris)} triangles, {len(pts)} distance queries, "
          f"{len(wpts)} winding queries, threads={args.threads}")
    results = {}
    for name in kernels.BACKENDS:
        kernels.use_backend(name)
        td, d = _time(lambda: kernels.unsigned_distance(pts, tris, bvh, args.threads), args.repeat)
        tw, w = _time(lambda: kernels.winding_number(wpts, tris, args.threads), args.repeat)
        results[name] = (d, w)
        print(f"  {name:9s} distance {td * 1e3:9.1f} ms   winding {tw * 1e3:9.1f} ms")
    if len(results) == 2:
        (d0, w0), (d1, w1) = results.values()
        print(f"  max |distance diff| {np.abs(d0 - d1).max():.2e}   max |winding diff| {np.abs(w0 - w1).max():.2e}")


if __name__ == "__main__":
    main()
