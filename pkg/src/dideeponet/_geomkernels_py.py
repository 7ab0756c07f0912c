"""Numpy fallback with the same signatures as the compiled ``_geomkernels``.

Distances are brute force over all triangles (the BVH arrays are accepted
and ignored); results match the compiled path to rounding.
"""

import numpy as np

_PAIR_BUDGET = 1 << 21


def _chunks(lo, hi, n_tris):
    step = max(1, _PAIR_BUDGET // max(n_tris, 1))
    for s in range(lo, hi, step):
        yield s, min(hi, s + step)


def triangle_dist2(p, a, b, c):
    """Squared point-triangle distance; all arguments broadcast over leading axes."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        inv = 1.0 / (va + vb + vc)
    conds = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    shape = conds[0].shape + (3,)
    choices = [
        np.broadcast_to(a, shape),
        np.broadcast_to(b, shape),
        a + v_ab[..., None] * ab,
        np.broadcast_to(c, shape),
        a + w_ac[..., None] * ac,
        b + w_bc[..., None] * (c - b),
    ]
    q = a + (vb * inv)[..., None] * ab + (vc * inv)[..., None] * ac
    for cond, choice in zip(reversed(conds), reversed(choices)):
        q = np.where(cond[..., None], choice, q)
    diff = q - p
    return np.einsum("...i,...i->...", diff, diff)


def nearest_distances(points, tris, bmin, bmax, left, right, start, count, order, out, lo, hi):
    points = np.asarray(points)
    tris = np.asarray(tris)
    a, b, c = tris[None, :, 0], tris[None, :, 1], tris[None, :, 2]
    for s, e in _chunks(lo, hi, len(tris)):
        p = points[s:e, None, :]
        out[s:e] = np.sqrt(triangle_dist2(p, a, b, c).min(axis=1))


def winding_numbers(points, tris, out, lo, hi):
    points = np.asarray(points)
    tris = np.asarray(tris)
    for s, e in _chunks(lo, hi, len(tris)):
        p = points[s:e, None, :]
        A, B, C = tris[None, :, 0] - p, tris[None, :, 1] - p, tris[None, :, 2] - p
        la, lb, lc = (np.linalg.norm(X, axis=-1) for X in (A, B, C))
        det = np.einsum("...i,...i->...", A, np.cross(B, C))
        den = (la * lb * lc + np.einsum("...i,...i->...", A, B) * lc
               + np.einsum("...i,...i->...", B, C) * la
               + np.einsum("...i,...i->...", C, A) * lb)
        out[s:e] = (2.0 * np.arctan2(det, den)).sum(axis=1) / (4.0 * np.pi)
