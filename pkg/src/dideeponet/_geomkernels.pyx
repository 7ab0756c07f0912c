# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled point/triangle kernels: BVH nearest distance and winding numbers.

Every kernel fills ``out[lo:hi]`` and runs without the GIL, so callers can
split the point range across threads.
"""

from libc.math cimport sqrt, atan2, M_PI

ctypedef long long idx_t

cdef enum:
    MAX_STACK = 256


cdef inline double _dot(double ax, double ay, double az,
                        double bx, double by, double bz) nogil:
    return ax * bx + ay * by + az * bz


cdef double _tri_dist2(double px, double py, double pz,
                       double ax, double ay, double az,
                       double bx, double by, double bz,
                       double cx, double cy, double cz) nogil:
    # closest point on triangle by Voronoi region (Ericson, Real-Time Collision Detection 5.1.5)
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double apx = px - ax, apy = py - ay, apz = pz - az
    cdef double d1 = _dot(abx, aby, abz, apx, apy, apz)
    cdef double d2 = _dot(acx, acy, acz, apx, apy, apz)
    cdef double bpx, bpy, bpz, cpx, cpy, cpz, d3, d4, d5, d6, va, vb, vc
    cdef double qx, qy, qz, v, w, denom
    if d1 <= 0.0 and d2 <= 0.0:
        qx, qy, qz = ax, ay, az
    else:
        bpx = px - bx; bpy = py - by; bpz = pz - bz
        d3 = _dot(abx, aby, abz, bpx, bpy, bpz)
        d4 = _dot(acx, acy, acz, bpx, bpy, bpz)
        if d3 >= 0.0 and d4 <= d3:
            qx, qy, qz = bx, by, bz
        else:
            vc = d1 * d4 - d3 * d2
            if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                v = d1 / (d1 - d3)
                qx = ax + v * abx; qy = ay + v * aby; qz = az + v * abz
            else:
                cpx = px - cx; cpy = py - cy; cpz = pz - cz
                d5 = _dot(abx, aby, abz, cpx, cpy, cpz)
                d6 = _dot(acx, acy, acz, cpx, cpy, cpz)
                if d6 >= 0.0 and d5 <= d6:
                    qx, qy, qz = cx, cy, cz
                else:
                    vb = d5 * d2 - d1 * d6
                    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                        w = d2 / (d2 - d6)
                        qx = ax + w * acx; qy = ay + w * acy; qz = az + w * acz
                    else:
                        va = d3 * d6 - d5 * d4
                        if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                            qx = bx + w * (cx - bx); qy = by + w * (cy - by); qz = bz + w * (cz - bz)
                        else:
                            denom = 1.0 / (va + vb + vc)
                            v = vb * denom
                            w = vc * denom
                            qx = ax + abx * v + acx * w
                            qy = ay + aby * v + acy * w
                            qz = az + abz * v + acz * w
    qx -= px; qy -= py; qz -= pz
    return qx * qx + qy * qy + qz * qz


cdef inline double _box_dist2(double px, double py, double pz,
                              const double[:, ::1] bmin, const double[:, ::1] bmax, idx_t n) nogil:
    cdef double d = 0.0, t
    t = bmin[n, 0] - px
    if t > 0.0: d += t * t
    t = px - bmax[n, 0]
    if t > 0.0: d += t * t
    t = bmin[n, 1] - py
    if t > 0.0: d += t * t
    t = py - bmax[n, 1]
    if t > 0.0: d += t * t
    t = bmin[n, 2] - pz
    if t > 0.0: d += t * t
    t = pz - bmax[n, 2]
    if t > 0.0: d += t * t
    return d


def nearest_distances(const double[:, ::1] points, const double[:, :, ::1] tris,
                      const double[:, ::1] bmin, const double[:, ::1] bmax,
                      const idx_t[::1] left, const idx_t[::1] right,
                      const idx_t[::1] start, const idx_t[::1] count,
                      const idx_t[::1] order, double[::1] out,
                      Py_ssize_t lo, Py_ssize_t hi):
    """Unsigned distance from each point to the nearest triangle, via the BVH."""
    cdef Py_ssize_t i
    cdef idx_t stack[MAX_STACK]
    cdef idx_t sp, node, k, t, l, r
    cdef double px, py, pz, best, d, dl, dr
    with nogil:
        for i in range(lo, hi):
            px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
            best = 1e300
            sp = 0
            stack[sp] = 0
            sp += 1
            while sp > 0:
                sp -= 1
                node = stack[sp]
                if _box_dist2(px, py, pz, bmin, bmax, node) >= best:
                    continue
                if left[node] < 0:
                    for k in range(start[node], start[node] + count[node]):
                        t = order[k]
                        d = _tri_dist2(px, py, pz,
                                       tris[t, 0, 0], tris[t, 0, 1], tris[t, 0, 2],
                                       tris[t, 1, 0], tris[t, 1, 1], tris[t, 1, 2],
                                       tris[t, 2, 0], tris[t, 2, 1], tris[t, 2, 2])
                        if d < best:
                            best = d
                    continue
                l = left[node]
                r = right[node]
                dl = _box_dist2(px, py, pz, bmin, bmax, l)
                dr = _box_dist2(px, py, pz, bmin, bmax, r)
                # push the farther child first so the nearer one is expanded next
                if dl < dr:
                    stack[sp] = r; sp += 1
                    stack[sp] = l; sp += 1
                else:
                    stack[sp] = l; sp += 1
                    stack[sp] = r; sp += 1
            out[i] = sqrt(best)


def winding_numbers(const double[:, ::1] points, const double[:, :, ::1] tris,
                    double[::1] out, Py_ssize_t lo, Py_ssize_t hi):
    """Generalized winding number: summed signed solid angles over 4*pi."""
    cdef Py_ssize_t i, t, T = tris.shape[0]
    cdef double px, py, pz, acc
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz, la, lb, lc, det, den
    with nogil:
        for i in range(lo, hi):
            px = points[i, 0]; py = points[i, 1]; pz = points[i, 2]
            acc = 0.0
            for t in range(T):
                ax = tris[t, 0, 0] - px; ay = tris[t, 0, 1] - py; az = tris[t, 0, 2] - pz
                bx = tris[t, 1, 0] - px; by = tris[t, 1, 1] - py; bz = tris[t, 1, 2] - pz
                cx = tris[t, 2, 0] - px; cy = tris[t, 2, 1] - py; cz = tris[t, 2, 2] - pz
                la = sqrt(ax * ax + ay * ay + az * az)
                lb = sqrt(bx * bx + by * by + bz * bz)
                lc = sqrt(cx * cx + cy * cy + cz * cz)
                det = (ax * (by * cz - bz * cy)
                       - ay * (bx * cz - bz * cx)
                       + az * (bx * cy - by * cx))
                den = (la * lb * lc + (ax * bx + ay * by + az * bz) * lc
                       + (bx * cx + by * cy + bz * cz) * la
                       + (cx * ax + cy * ay + cz * az) * lb)
                acc += 2.0 * atan2(det, den)
            out[i] = acc / (4.0 * M_PI)
