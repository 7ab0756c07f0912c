"""Backend selection for the geometry kernels.

The compiled extension is used when it imports; otherwise (or when
``DIDEEPONET_PURE_PYTHON=1``) the numpy fallback takes over. Point ranges are
split across a thread pool because the compiled kernels release the GIL.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _geomkernels_py

log = logging.getLogger(__name__)

_compiled = None
if os.environ.get("DIDEEPONET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _geomkernels as _compiled
    except ImportError:  # pragma: no cover - depends on the build
        log.info("compiled geometry kernels unavailable, using numpy fallback")

BACKENDS = {"python": _geomkernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

_active = "compiled" if _compiled is not None else "python"

LEAF_SIZE = 4


def backend():
    return _active


def use_backend(name):
    """Switch backends at runtime (benchmarks and parity tests)."""
    global _active
    if name not in BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {sorted(BACKENDS)}")
    _active = name


def default_threads():
    env = os.environ.get("DIDEEPONET_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class BVH:
    """Flat axis-aligned bounding-box tree over triangles. Node 0 is the root."""

    bmin: np.ndarray
    bmax: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray


def build_bvh(tris, leaf_size=LEAF_SIZE):
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    lo_all = tris.min(axis=1)
    hi_all = tris.max(axis=1)
    cent = tris.mean(axis=1)
    order = np.arange(len(tris), dtype=np.int64)
    bmin, bmax, left, right, start, count = [], [], [], [], [], []

    def new_node(s, e):
        idx = order[s:e]
        bmin.append(lo_all[idx].min(axis=0))
        bmax.append(hi_all[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(s)
        count.append(e - s)
        return len(bmin) - 1

    stack = [(new_node(0, len(tris)), 0, len(tris))]
    while stack:
        node, s, e = stack.pop()
        if e - s <= leaf_size:
            continue
        idx = order[s:e]
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = (e - s) // 2
        part = np.argpartition(c[:, axis], mid)
        order[s:e] = idx[part]
        l = new_node(s, s + mid)
        r = new_node(s + mid, e)
        left[node], right[node] = l, r
        count[node] = 0
        stack.append((l, s, s + mid))
        stack.append((r, s + mid, e))

    as_i = lambda v: np.asarray(v, dtype=np.int64)
    return BVH(
        bmin=np.ascontiguousarray(bmin), bmax=np.ascontiguousarray(bmax),
        left=as_i(left), right=as_i(right), start=as_i(start), count=as_i(count),
        order=order,
    )


def _run(kernel, n, threads, *args):
    out = np.empty(n, dtype=np.float64)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or n < 256 or _active == "python":
        kernel(*args, out, 0, n)
        return out
    bounds = np.linspace(0, n, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(kernel, *args, out, int(lo), int(hi))
                   for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        for f in futures:
            f.result()
    return out


def unsigned_distance(points, tris, bvh=None, threads=None):
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    bvh = build_bvh(tris) if bvh is None else bvh
    mod = BACKENDS[_active]
    return _run(mod.nearest_distances, len(points), threads, points, tris,
                bvh.bmin, bvh.bmax, bvh.left, bvh.right, bvh.start, bvh.count, bvh.order)


def winding_number(points, tris, threads=None):
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    tris = np.ascontiguousarray(tris, dtype=np.float64)
    mod = BACKENDS[_active]
    return _run(mod.winding_numbers, len(points), threads, points, tris)
