"""Analytic shape catalog, surface meshes and signed distance fields.

Shapes sit at the cavity center (1, 1, 1) of the [0, 2]^3 domain. Each
:class:`ShapeSpec` stores dimensions in its own body frame; ``rotation`` maps
body coordinates to world coordinates (world = center + R @ body).

Dimension conventions per kind:

* ``cylinder``: (radius, height), axis along body z
* ``box``: (x, y, z) edge lengths
* ``ring``: (major_diameter, inner_diameter), a torus in the body xy-plane
* ``ellipsoid``: (dx, dy, dz) diameters
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import fem, kernels
from .errors import ConfigurationError, FormatError, ValidationError

KINDS = ("cylinder", "box", "ring", "ellipsoid")
CENTER = (1.0, 1.0, 1.0)

CYLINDER_RADII = (0.35, 0.4, 0.45)
BOX_MINOR_EDGES = (0.7, 0.8, 0.9)
RING_INNER_DIAMETERS = (0.65, 0.75, 0.85)
ELLIPSOID_MINOR_DIAMETERS = (0.65, 0.75, 0.85)
ROTATIONS_PER_VARIANT = 8
# the unrotated ring heading its class; no inner diameter is given for it
BASE_RING_INNER_DIAMETER = 0.5

ELLIPSOID_SUBDIVISIONS = 128


class UnsupportedShapeError(ConfigurationError):
    pass


def _check_rotation(R, tol=1e-10):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ConfigurationError(f"rotation must be 3x3, got {R.shape}")
    if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise ConfigurationError("rotation matrix is not a proper orthonormal rotation")
    return R


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    dims: tuple
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    center: tuple = CENTER

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown shape class {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        object.__setattr__(self, "rotation", _check_rotation(self.rotation))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        expected = {"cylinder": 2, "box": 3, "ring": 2, "ellipsoid": 3}[self.kind]
        if len(self.dims) != expected or min(self.dims) <= 0:
            raise ConfigurationError(f"{self.kind} needs {expected} positive dimensions, got {self.dims}")
        if self.kind == "ring" and self.dims[1] >= self.dims[0]:
            raise ConfigurationError("ring inner diameter must be below the major diameter")

    @property
    def major_dimension(self):
        if self.kind == "cylinder":
            return max(self.dims[1], 2 * self.dims[0])
        return max(self.dims) if self.kind != "ring" else self.dims[0]

    @property
    def torus_radii(self):
        """(R, r): tube-center radius and tube radius, outer diameter = major diameter."""
        major, inner = self.dims
        return (major + inner) / 4.0, (major - inner) / 4.0

    @property
    def is_sphere(self):
        return self.kind == "ellipsoid" and len(set(self.dims)) == 1

    def to_body(self, points):
        p = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        return p @ self.rotation

    def to_world(self, body):
        return np.asarray(body) @ self.rotation.T + np.asarray(self.center)

    def to_dict(self):
        return {"kind": self.kind, "dims": list(self.dims),
                "rotation": self.rotation.tolist(), "center": list(self.center)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d["dims"]), np.array(d["rotation"]), tuple(d["center"]))

    def __eq__(self, other):
        if not isinstance(other, ShapeSpec):
            return NotImplemented
        return (self.kind == other.kind and self.dims == other.dims
                and self.center == other.center
                and np.array_equal(self.rotation, other.rotation))

    def __hash__(self):
        return hash((self.kind, self.dims, self.center, self.rotation.tobytes()))


# ---------------------------------------------------------------- catalog

def random_rotation(rng):
    """Uniform random rotation from three uniforms via a unit quaternion (Shoemake)."""
    u1, u2, u3 = (float(x) for x in np.asarray(rng.random(3), dtype=np.float64).ravel()[:3])
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    q = np.array([a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2),
                  b * np.sin(2 * np.pi * u3), b * np.cos(2 * np.pi * u3)])
    x, y, z, w = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def build_catalog(seed=0):
    """The 100-shape catalog: 25 per class, each a base shape plus 3 variants x 8 rotations."""
    rng = np.random.default_rng(seed)
    out = []

    def variants(kind, base_dims, dims_list):
        out.append(ShapeSpec(kind, base_dims))
        for dims in dims_list:
            for _ in range(ROTATIONS_PER_VARIANT):
                out.append(ShapeSpec(kind, dims, random_rotation(rng)))

    variants("cylinder", (0.5, 1.0), [(r, 1.0) for r in CYLINDER_RADII])
    variants("box", (1.0, 1.0, 1.0), [(1.0, e, e) for e in BOX_MINOR_EDGES])
    variants("ring", (1.0, BASE_RING_INNER_DIAMETER), [(1.0, d) for d in RING_INNER_DIAMETERS])
    variants("ellipsoid", (1.0, 1.0, 1.0), [(1.0, d, d) for d in ELLIPSOID_MINOR_DIAMETERS])
    return out


def catalog_bytes(catalog):
    return json.dumps([s.to_dict() for s in catalog], sort_keys=True).encode()


# ---------------------------------------------------------------- meshes

@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)

    def triangle_array(self):
        return self.vertices[self.triangles]

    def flipped(self):
        return TriMesh(self.vertices, self.triangles[:, ::-1])

    def signed_volume(self):
        a, b, c = (self.triangle_array()[:, k] for k in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def boundary_edges(self):
        """Undirected edges not shared by exactly two triangles."""
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]])
        und, counts = np.unique(np.sort(e, axis=1), axis=0, return_counts=True)
        return und[counts != 2]

    def is_consistently_oriented(self):
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]],
                            self.triangles[:, [2, 0]]])
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool((counts == 1).all())


def validate_mesh(mesh):
    bad = mesh.boundary_edges()
    if len(bad):
        shown = ", ".join(f"({a},{b})" for a, b in bad[:10])
        raise ValidationError(f"mesh is not watertight: {len(bad)} open or non-manifold edges, e.g. {shown}")
    if not mesh.is_consistently_oriented():
        raise ValidationError("mesh triangles are not consistently oriented")


def _cube_surface(m):
    """Integer lattice on the surface of [0, m]^3 with outward-wound triangles."""
    g = np.arange(m + 1)
    I, J, K = np.meshgrid(g, g, g, indexing="ij")
    on = (I == 0) | (I == m) | (J == 0) | (J == m) | (K == 0) | (K == m)
    index = -np.ones((m + 1,) * 3, dtype=np.int64)
    index[on] = np.arange(int(on.sum()))
    verts = np.stack([I[on], J[on], K[on]], axis=1).astype(np.float64)
    i, j = (a.ravel() for a in np.meshgrid(np.arange(m), np.arange(m), indexing="ij"))
    tris = []
    for d, (t1, t2) in ((0, (1, 2)), (1, (2, 0)), (2, (0, 1))):
        for side in (0, m):
            def vid(a, b):
                c = [None] * 3
                c[d], c[t1], c[t2] = np.full_like(a, side), a, b
                return index[c[0], c[1], c[2]]
            v00, v10, v11, v01 = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if side == m:
                tris += [np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)]
            else:
                tris += [np.stack([v00, v11, v10], 1), np.stack([v00, v01, v11], 1)]
    return verts, np.concatenate(tris)


def _box_body(dims, n):
    m = max(1, n // 8)  # planar faces: refinement only shapes the triangles
    lattice, tris = _cube_surface(m)
    return (lattice / m - 0.5) * np.asarray(dims), tris


def _ellipsoid_body(dims, n):
    m = max(2, n // 2)
    lattice, tris = _cube_surface(m)
    t = np.tan(0.25 * np.pi * (2.0 * lattice / m - 1.0))
    unit = t / np.linalg.norm(t, axis=1, keepdims=True)
    return unit * (0.5 * np.asarray(dims)), tris


def _cylinder_body(dims, n):
    r, H = dims
    nt, nz, nr = max(8, n), max(1, n // 16), max(1, n // 16)
    theta = 2 * np.pi * np.arange(nt) / nt
    ct, st = np.cos(theta), np.sin(theta)
    verts, tris = [], []

    def ring(radius, z):
        start = sum(len(v) for v in verts)
        verts.append(np.stack([radius * ct, radius * st, np.full(nt, z)], axis=1))
        return start + np.arange(nt)

    def strip(lower, upper):
        # lower -> upper in the outward-normal-consistent sense
        nxt = np.roll(np.arange(nt), -1)
        tris.append(np.stack([lower, lower[nxt], upper[nxt]], 1))
        tris.append(np.stack([lower, upper[nxt], upper], 1))

    side = [ring(r, -H / 2 + H * k / nz) for k in range(nz + 1)]
    for a, b in zip(side[:-1], side[1:]):
        strip(a, b)
    for z, sign in ((H / 2, 1), (-H / 2, -1)):
        rim = side[-1] if sign > 0 else side[0]
        rings = [ring(r * k / nr, z) for k in range(1, nr)] + [rim]
        c = sum(len(v) for v in verts)
        verts.append(np.array([[0.0, 0.0, z]]))
        nxt = np.roll(np.arange(nt), -1)
        first = rings[0]
        fan = np.stack([np.full(nt, c), first, first[nxt]], 1)
        tris.append(fan if sign > 0 else fan[:, ::-1])
        for a, b in zip(rings[:-1], rings[1:]):
            quad = [np.stack([a, b, b[nxt]], 1), np.stack([a, b[nxt], a[nxt]], 1)]
            tris += quad if sign > 0 else [q[:, ::-1] for q in quad]
    return np.concatenate(verts), np.concatenate(tris)


def _torus_body(spec, n):
    R, r = spec.torus_radii
    nu, nv = max(8, n), max(8, n // 2)
    u = 2 * np.pi * np.arange(nu) / nu
    v = 2 * np.pi * np.arange(nv) / nv
    U, V = np.meshgrid(u, v, indexing="ij")
    rho = R + r * np.cos(V)
    verts = np.stack([rho * np.cos(U), rho * np.sin(U), r * np.sin(V)], axis=-1).reshape(-1, 3)
    iu, iv = (a.ravel() for a in np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij"))
    idx = lambda a, b: (a % nu) * nv + (b % nv)
    p00, p10, p11, p01 = idx(iu, iv), idx(iu + 1, iv), idx(iu + 1, iv + 1), idx(iu, iv + 1)
    tris = np.concatenate([np.stack([p00, p10, p11], 1), np.stack([p00, p11, p01], 1)])
    return verts, tris


def triangulate(spec: ShapeSpec, subdivisions=64):
    """Watertight, outward-wound parametric mesh of the shape with vertices on the surface."""
    if subdivisions < 2:
        raise ConfigurationError(f"subdivisions must be >= 2, got {subdivisions}")
    if spec.kind == "box":
        body, tris = _box_body(spec.dims, subdivisions)
    elif spec.kind == "ellipsoid":
        body, tris = _ellipsoid_body(spec.dims, subdivisions)
    elif spec.kind == "cylinder":
        body, tris = _cylinder_body(spec.dims, subdivisions)
    elif spec.kind == "ring":
        body, tris = _torus_body(spec, subdivisions)
    else:  # pragma: no cover - ShapeSpec rejects unknown kinds
        raise ConfigurationError(f"unknown shape class {spec.kind!r}")
    return TriMesh(spec.to_world(body), tris)


# ---------------------------------------------------------------- analytic SDFs

def _radial(x, y):
    rho = np.hypot(x, y)
    safe = np.where(rho > 0, rho, 1.0)
    return rho, np.where(rho > 0, x / safe, 1.0), np.where(rho > 0, y / safe, 0.0)


def _sdf_body(spec, p, with_grad):
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    grad = np.zeros_like(p) if with_grad else None
    if spec.kind == "box":
        b = 0.5 * np.asarray(spec.dims)
        q = np.abs(p) - b
        outside = np.maximum(q, 0.0)
        n_out = np.linalg.norm(outside, axis=1)
        qmax = q.max(axis=1)
        d = n_out + np.minimum(qmax, 0.0)
        if with_grad:
            sgn = np.where(p >= 0, 1.0, -1.0)
            k = q.argmax(axis=1)
            inner = np.zeros_like(p)
            inner[np.arange(len(p)), k] = sgn[np.arange(len(p)), k]
            safe = np.where(n_out > 0, n_out, 1.0)[:, None]
            grad = np.where((qmax > 0)[:, None], sgn * outside / safe, inner)
        return d, grad
    if spec.kind == "cylinder":
        r, H = spec.dims
        rho, ex, ey = _radial(x, y)
        d1, d2 = rho - r, np.abs(z) - 0.5 * H
        o1, o2 = np.maximum(d1, 0.0), np.maximum(d2, 0.0)
        n_out = np.hypot(o1, o2)
        d = np.minimum(np.maximum(d1, d2), 0.0) + n_out
        if with_grad:
            sz = np.where(z >= 0, 1.0, -1.0)
            safe = np.where(n_out > 0, n_out, 1.0)
            g_out = np.stack([o1 * ex, o1 * ey, o2 * sz], 1) / safe[:, None]
            radial_wins = d1 >= d2
            g_in = np.where(radial_wins[:, None], np.stack([ex, ey, 0 * ex], 1),
                            np.stack([0 * ex, 0 * ex, sz], 1))
            grad = np.where((n_out > 0)[:, None], g_out, g_in)
        return d, grad
    if spec.kind == "ring":
        R, r = spec.torus_radii
        rho, ex, ey = _radial(x, y)
        qn = np.hypot(rho - R, z)
        d = qn - r
        if with_grad:
            safe = np.where(qn > 0, qn, 1.0)
            grad = np.stack([(rho - R) * ex, (rho - R) * ey, z], 1) / safe[:, None]
        return d, grad
    if spec.is_sphere:
        rad = 0.5 * spec.dims[0]
        n = np.linalg.norm(p, axis=1)
        if with_grad:
            safe = np.where(n > 0, n, 1.0)
            grad = np.where((n > 0)[:, None], p / safe[:, None], np.array([1.0, 0.0, 0.0]))
        return n - rad, grad
    raise UnsupportedShapeError(
        "exact distance to a non-spherical ellipsoid has no closed form; use mesh_sdf"
    )


def analytic_sdf(spec: ShapeSpec, points):
    """Exact signed distance for boxes, cylinders, rings and spheres."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    d, _ = _sdf_body(spec, spec.to_body(pts.reshape(-1, 3)), with_grad=False)
    return float(d[0]) if single else d


def analytic_sdf_gradient(spec: ShapeSpec, points):
    """(sdf, world-frame gradient) where the analytic form exists."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    d, g = _sdf_body(spec, spec.to_body(pts), with_grad=True)
    return d, g @ spec.rotation.T


def has_analytic_sdf(spec):
    return spec.kind != "ellipsoid" or spec.is_sphere


def level_function(spec: ShapeSpec, points):
    """A 1-Lipschitz function, negative inside, zero on the surface, with its gradient.

    Equal to the exact SDF where one is available. For general ellipsoids it is
    ``(|D^-1 y| - 1) * r_min`` with D the semi-axes, which bounds the true
    distance from below in magnitude.
    """
    if has_analytic_sdf(spec):
        return analytic_sdf_gradient(spec, points)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    semi = 0.5 * np.asarray(spec.dims)
    rmin = semi.min()
    y = spec.to_body(pts)
    k0 = np.linalg.norm(y / semi, axis=1)
    safe = np.where(k0 > 0, k0, 1.0)
    g_body = rmin * (y / semi**2) / safe[:, None]
    return (k0 - 1.0) * rmin, g_body @ spec.rotation.T


# ---------------------------------------------------------------- voxelization

@dataclass
class SDFField:
    grid: np.ndarray

    @property
    def G(self):
        return self.grid.shape[0]

    @property
    def h(self):
        return fem.spacing(self.G)


def _grid_inside(dist, points, tris, h, threads):
    """Inside flags for grid nodes given exact unsigned distances.

    The winding number is constant on the open ball of radius d(p) around p,
    so neighbors joined through a node with d > h share their sign. Only
    nodes near the surface plus one node per far component need an explicit
    winding evaluation.
    """
    G = dist.shape[0]
    far = dist > h * (1.0 + 1e-9)
    labels, n_comp = ndimage.label(far)
    inside = np.zeros(dist.shape, dtype=bool)
    near = ~far
    if near.any():
        w = kernels.winding_number(points[near.ravel()], tris, threads)
        inside[near] = np.abs(w) > 0.5
    if n_comp:
        flat = labels.ravel()
        _, first = np.unique(flat, return_index=True)
        reps = first[flat[first] > 0]
        w = kernels.winding_number(points[reps], tris, threads)
        comp_inside = np.zeros(n_comp + 1, dtype=bool)
        comp_inside[flat[reps]] = np.abs(w) > 0.5
        inside |= comp_inside[labels] & far
    return inside.reshape(G, G, G)


def mesh_sdf(mesh: TriMesh, resolution, threads=None):
    """Signed distance to a watertight mesh sampled at the G^3 grid nodes."""
    if resolution < 8:
        raise ConfigurationError(f"SDF resolution must be >= 8, got {resolution}")
    validate_mesh(mesh)
    G = int(resolution)
    pts = fem.node_coordinates(G)
    tris = mesh.triangle_array()
    dist = kernels.unsigned_distance(pts, tris, threads=threads).reshape(G, G, G)
    inside = _grid_inside(dist, pts, tris, fem.spacing(G), threads)
    return SDFField(np.where(inside, -dist, dist))


def mesh_sdf_points(mesh: TriMesh, points, threads=None):
    """Signed distance at arbitrary points (winding number evaluated directly)."""
    validate_mesh(mesh)
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    tris = mesh.triangle_array()
    dist = kernels.unsigned_distance(pts, tris, threads=threads)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    in_box = np.all((pts >= lo) & (pts <= hi), axis=1)
    inside = np.zeros(len(pts), dtype=bool)
    if in_box.any():
        inside[in_box] = np.abs(kernels.winding_number(pts[in_box], tris, threads)) > 0.5
    return np.where(inside, -dist, dist)


def voxelize(spec: ShapeSpec, resolution, subdivisions=ELLIPSOID_SUBDIVISIONS, threads=None):
    """SDF grid of a catalog shape: analytic where exact, mesh-based for ellipsoids."""
    if resolution < 8:
        raise ConfigurationError(f"SDF resolution must be >= 8, got {resolution}")
    G = int(resolution)
    if has_analytic_sdf(spec):
        return SDFField(analytic_sdf(spec, fem.node_coordinates(G)).reshape(G, G, G))
    return mesh_sdf(triangulate(spec, subdivisions), G, threads)


# ---------------------------------------------------------------- STL

_STL_RECORD = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])


def write_stl(mesh: TriMesh, path, header=b"dideeponet binary STL"):
    tri = mesh.triangle_array()
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    rec = np.zeros(len(tri), dtype=_STL_RECORD)
    rec["normal"] = n / np.where(norm > 0, norm, 1.0)
    rec["v"] = tri
    with open(path, "wb") as fh:
        fh.write(header[:80].ljust(80, b"\0"))
        fh.write(struct.pack("<I", len(tri)))
        fh.write(rec.tobytes())


def read_stl(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 84:
        raise FormatError("STL file shorter than its 84-byte preamble", offset=len(data))
    (count,) = struct.unpack_from("<I", data, 80)
    if len(data) != 84 + 50 * count:
        raise FormatError(f"STL declares {count} triangles but holds {len(data) - 84} record bytes",
                          offset=84)
    rec = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    corners = rec["v"].reshape(-1, 3).astype(np.float64)
    verts, inverse = np.unique(corners, axis=0, return_inverse=True)
    return TriMesh(verts, inverse.reshape(-1, 3))
