"""Element-center values, gradients and continuity residuals on a uniform hex grid.

Nodal grids have shape (G, G, G), indexed (i, j, k) <-> (x, y, z) with node
coordinates ``2*i/(G-1)`` on the closed cube [0, 2]^3. Element ``(i, j, k)``
owns nodes ``i..i+1`` etc, giving (G-1)^3 elements of edge h = 2/(G-1).

Corners of an element are numbered ``a = 4*dx + 2*dy + dz`` and carry the
reference-coordinate signs ``CORNER_SIGNS[a]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError

DOMAIN_LENGTH = 2.0

CORNER_OFFSETS = np.array(
    [[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)], dtype=np.int64
)
CORNER_SIGNS = (2 * CORNER_OFFSETS - 1).astype(np.float64)


def spacing(G):
    if G < 2:
        raise ConfigurationError(f"need at least 2 nodes per axis, got {G}")
    return DOMAIN_LENGTH / (G - 1)


def node_coordinates(G):
    """(G**3, 3) array of node positions in C order."""
    x = np.linspace(0.0, DOMAIN_LENGTH, G)
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)


def element_centers(G):
    x = np.linspace(0.0, DOMAIN_LENGTH, G)
    c = 0.5 * (x[:-1] + x[1:])
    X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)


def element_corners(G):
    """(E, 8) flat node indices of every element's corners, E = (G-1)**3."""
    n = G - 1
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    base = (i * G * G + j * G + k).ravel()
    step = CORNER_OFFSETS @ np.array([G * G, G, 1])
    return base[:, None] + step[None, :]


def boundary_face_nodes(G):
    """Flat node indices of the six outer faces, keyed xmin, xmax, ymin, ymax, zmin, zmax."""
    idx = np.arange(G**3).reshape(G, G, G)
    return {
        "xmin": idx[0].ravel(), "xmax": idx[-1].ravel(),
        "ymin": idx[:, 0].ravel(), "ymax": idx[:, -1].ravel(),
        "zmin": idx[:, :, 0].ravel(), "zmax": idx[:, :, -1].ravel(),
    }


# ---------------------------------------------------------------- single element

def center_value(nodal_8):
    """Trilinear interpolant at the centroid: every shape function equals 1/8 there."""
    return float(np.mean(np.asarray(nodal_8, dtype=np.float64)))


def center_gradient(nodal_8, h):
    """Exact derivative of the trilinear interpolant at the centroid.

    Along each axis this is the mean over the four corners of the upper face
    minus the mean over the lower face, divided by the edge length.
    """
    if h <= 0:
        raise ConfigurationError(f"element size must be positive, got {h}")
    u = np.asarray(nodal_8, dtype=np.float64)
    return CORNER_SIGNS.T @ u / (4.0 * h)


# ---------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray

    def jacobian(self, h):
        return (0.5 * h) ** 3


def gauss_2x2x2():
    g = 1.0 / np.sqrt(3.0)
    return QuadratureRule(points=CORNER_SIGNS * g, weights=np.ones(8))


def shape_derivatives(points, h):
    """dphi_a/dx_j at the given reference points: array (n_points, 8, 3)."""
    pts = np.atleast_2d(points)
    s = CORNER_SIGNS
    # (1 + s_a . xi) per axis, shape (n, 8, 3)
    lin = 1.0 + pts[:, None, :] * s[None, :, :]
    d = np.empty((pts.shape[0], 8, 3))
    d[..., 0] = s[:, 0] * lin[..., 1] * lin[..., 2]
    d[..., 1] = s[:, 1] * lin[..., 0] * lin[..., 2]
    d[..., 2] = s[:, 2] * lin[..., 0] * lin[..., 1]
    return d / 8.0 * (2.0 / h)


# ---------------------------------------------------------------- whole grids

@dataclass
class NodalField:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.u, self.v, self.w = (np.asarray(c, dtype=np.float64) for c in (self.u, self.v, self.w))
        shapes = {self.u.shape, self.v.shape, self.w.shape}
        if len(shapes) != 1:
            raise ConfigurationError(f"velocity components disagree in shape: {sorted(shapes)}")
        shape = self.u.shape
        if len(shape) != 3 or len(set(shape)) != 1:
            raise ConfigurationError(f"nodal grids must be cubic G x G x G, got {shape}")

    @classmethod
    def from_array(cls, arr):
        """From a (3, G, G, G) stack, or (G**3, 3) rows in C order."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            G = round(arr.shape[0] ** (1.0 / 3.0))
            if G**3 != arr.shape[0] or arr.shape[1] != 3:
                raise ConfigurationError(f"cannot read {arr.shape} as G**3 x 3 nodal rows")
            arr = arr.T.reshape(3, G, G, G)
        return cls(arr[0], arr[1], arr[2])

    @property
    def G(self):
        return self.u.shape[0]

    @property
    def h(self):
        return spacing(self.G)

    def components(self):
        return (self.u, self.v, self.w)

    def as_rows(self):
        return np.stack([c.ravel() for c in self.components()], axis=1)


@dataclass
class ElementField:
    """Per-element quantities, flattened in C order over (G-1)^3 elements.

    ``gradients[e, i, j]`` is d(component i)/d(x_j).
    """

    centers: np.ndarray
    gradients: np.ndarray
    mask: np.ndarray
    sdf: np.ndarray
    h: float

    @property
    def n_elements(self):
        return self.centers.shape[0]


def _corner_slices(grid):
    n = grid.shape[0] - 1
    return [grid[dx:dx + n, dy:dy + n, dz:dz + n] for dx, dy, dz in CORNER_OFFSETS]


def grid_center_values(grid):
    corners = _corner_slices(np.asarray(grid, dtype=np.float64))
    return sum(corners) / 8.0


def grid_center_gradients(grid, h):
    """(3, n, n, n) centroid derivatives of a nodal scalar grid."""
    corners = _corner_slices(np.asarray(grid, dtype=np.float64))
    out = []
    for j in range(3):
        acc = np.zeros_like(corners[0])
        for a, c in enumerate(corners):
            acc += CORNER_SIGNS[a, j] * c
        out.append(acc / (4.0 * h))
    return np.stack(out)


def fluid_mask(sdf):
    """Elements whose interpolated centroid SDF is strictly positive."""
    return grid_center_values(sdf).ravel() > 0.0


def postprocess(field: NodalField, sdf):
    sdf = np.asarray(sdf, dtype=np.float64)
    if sdf.shape != field.u.shape:
        raise ConfigurationError(
            f"SDF grid {sdf.shape} does not match velocity grid {field.u.shape}"
        )
    h = field.h
    comps = field.components()
    centers = np.stack([grid_center_values(c).ravel() for c in comps], axis=1)
    grads = np.stack(
        [grid_center_gradients(c, h).reshape(3, -1).T for c in comps], axis=1
    )
    sdf_c = grid_center_values(sdf).ravel()
    return ElementField(centers=centers, gradients=grads, mask=sdf_c > 0.0, sdf=sdf_c, h=h)


def gauss_point_divergence(field: NodalField):
    """Divergence of the trilinear interpolant at the 8 Gauss points of every element.

    Returns shape (8, n, n, n). Derivatives vary inside an element, so each
    Gauss point gets its own value.
    """
    rule = gauss_2x2x2()
    D = shape_derivatives(rule.points, field.h)
    slices = [_corner_slices(c) for c in field.components()]
    out = np.zeros((8,) + slices[0][0].shape)
    for g in range(8):
        for a in range(8):
            for j in range(3):
                out[g] += D[g, a, j] * slices[j][a]
    return out


def continuity_residual(field: NodalField):
    """Per-element L2 norm of the divergence and the grid total.

    Each element integrates the squared divergence with the 2x2x2 Gauss rule
    (jacobian (h/2)^3); the total is the root of the summed squares.
    """
    rule = gauss_2x2x2()
    div = gauss_point_divergence(field)
    sq = rule.jacobian(field.h) * np.tensordot(rule.weights, div * div, axes=1)
    per_element = np.sqrt(sq).ravel()
    return per_element, float(np.sqrt(sq.sum()))


# ---------------------------------------------------------------- differentiable stencils

class CenterStencil:
    """Linear maps from nodal rows (N, 3) to element-center values and gradients.

    ``corners`` (E, 8) indexes into the nodal rows, so the same stencil serves
    the full grid and a subsampled set of elements.
    """

    def __init__(self, corners, h, n_nodes):
        self.corners = np.asarray(corners, dtype=np.int64)
        self.h = float(h)
        self.n_nodes = int(n_nodes)
        self._flat = self.corners.ravel()

    @classmethod
    def full_grid(cls, G):
        return cls(element_corners(G), spacing(G), G**3)

    @property
    def n_elements(self):
        return self.corners.shape[0]

    def _scatter(self, per_corner):
        # per_corner: (E, 8, 3) -> nodal rows (N, 3)
        out = np.empty((self.n_nodes, per_corner.shape[-1]))
        for c in range(per_corner.shape[-1]):
            out[:, c] = np.bincount(self._flat, weights=per_corner[..., c].ravel(),
                                    minlength=self.n_nodes)
        return out

    def values_forward(self, nodal):
        return nodal[self.corners].mean(axis=1)

    def values_adjoint(self, g):
        return self._scatter(np.broadcast_to(g[:, None, :] / 8.0, (g.shape[0], 8, g.shape[1])))

    def gradients_forward(self, nodal):
        return np.einsum("eai,aj->eij", nodal[self.corners], CORNER_SIGNS) / (4.0 * self.h)

    def gradients_adjoint(self, g):
        return self._scatter(np.einsum("eij,aj->eai", g, CORNER_SIGNS) / (4.0 * self.h))

    def values(self, nodal):
        return ad.linear(nodal, self.values_forward, self.values_adjoint)

    def gradients(self, nodal):
        return ad.linear(nodal, self.gradients_forward, self.gradients_adjoint)


def divergence(gradients):
    """Trace of an (E, 3, 3) gradient tensor, differentiable."""
    def fwd(g):
        return np.trace(g, axis1=1, axis2=2)

    def adj(d):
        out = np.zeros(d.shape + (3, 3))
        for i in range(3):
            out[:, i, i] = d
        return out

    return ad.linear(gradients, fwd, adj)
