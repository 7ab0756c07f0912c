"""Training losses L1-L4 on element-center values and gradients.

All sums run over fluid elements (centroid SDF > 0). Derivative and
solenoidality terms are multiplied by the mesh size h. Boundary terms act on
nodal rows of the six outer faces and are left unnormalized by default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from . import fem
from .errors import ConfigurationError, DegenerateSampleError

LOSS_IDS = ("L1", "L2", "L3", "L4")

_GRAD_NAMES = (("ux", "uy", "uz"), ("vx", "vy", "vz"), ("wx", "wy", "wz"))


@dataclass(frozen=True)
class LossWeights:
    h: float
    u: float = 1.0
    v: float = 3.0
    w: float = 150.0
    ux: float = 15.0
    uy: float = 1.0
    uz: float = 30.0
    vx: float = 50.0
    vy: float = 30.0
    vz: float = 5.0
    wx: float = 600.0
    wy: float = 750.0
    wz: float = 600.0
    boundary: float = 5.0
    solenoidality: float = 10.0
    normalize_boundary: bool = False

    def __post_init__(self):
        for f in fields(self):
            if f.name == "normalize_boundary":
                continue
            val = getattr(self, f.name)
            if not val > 0:
                raise ConfigurationError(f"loss weight {f.name} must be > 0, got {val}")

    @classmethod
    def for_grid(cls, G, **overrides):
        return cls(h=fem.spacing(G), **overrides)

    def with_h(self, h):
        return replace(self, h=float(h))

    @property
    def velocity(self):
        return np.array([self.u, self.v, self.w])

    @property
    def gradient(self):
        """(3, 3): row = velocity component, column = derivative direction."""
        return np.array([[getattr(self, n) for n in row] for row in _GRAD_NAMES])

    @staticmethod
    def keys():
        return [f.name for f in fields(LossWeights) if f.name != "h"]


@dataclass
class BoundarySets:
    """Row indices of the nodal points on each outer face."""

    faces: dict

    @classmethod
    def for_grid(cls, G):
        return cls(fem.boundary_face_nodes(G))

    def restricted(self, nodes):
        """Re-index faces into a sorted subset of node rows (which must contain them)."""
        nodes = np.asarray(nodes)
        out = {}
        for name, idx in self.faces.items():
            pos = np.searchsorted(nodes, idx)
            if np.any(pos >= len(nodes)) or np.any(nodes[np.minimum(pos, len(nodes) - 1)] != idx):
                raise ConfigurationError(f"face {name} is not contained in the node subset")
            out[name] = pos
        return BoundarySets(out)

    def all_nodes(self):
        return np.unique(np.concatenate(list(self.faces.values())))

    def weights(self, n_rows, normalize=False):
        """(n_rows, 3) 0/1 weights: u on x faces, v on y faces, w on z faces."""
        W = np.zeros((n_rows, 3))
        for comp, axis in enumerate("xyz"):
            lo, hi = self.faces[f"{axis}min"], self.faces[f"{axis}max"]
            scale = 1.0 / (len(lo) + len(hi)) if normalize else 1.0
            np.add.at(W[:, comp], lo, scale)
            np.add.at(W[:, comp], hi, scale)
        return W


@dataclass
class MaskedCenters:
    pred_values: ad.Tensor
    pred_gradients: ad.Tensor
    true_values: np.ndarray
    true_gradients: np.ndarray
    mask: np.ndarray
    h: float
    # fluid-element count of the whole grid; defaults to the mask count
    grid_n_out: int | None = None
    # k/E when the stencil covers a uniform random subset of k of E elements
    sampled_fraction: float = 1.0

    @property
    def n_out(self):
        return int(self.mask.sum()) if self.grid_n_out is None else int(self.grid_n_out)

    @property
    def norm(self):
        """Factor in front of every element sum: 1/N_out on the full grid."""
        return 1.0 / (self.n_out * self.sampled_fraction)


def masked_centers(pred_rows, true_rows, stencil: fem.CenterStencil, mask, n_out=None,
                   sampled_fraction=1.0):
    """Postprocess predicted and true nodal rows onto the stencil's elements.

    ``n_out`` is the fluid-element count of the whole grid. When the stencil
    covers a uniform random subset of elements, ``sampled_fraction`` (k/E)
    rescales the sums so their expectation equals the full-grid loss.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (stencil.n_elements,):
        raise ConfigurationError(f"mask shape {mask.shape} does not match {stencil.n_elements} elements")
    n_out = int(mask.sum()) if n_out is None else int(n_out)
    if n_out == 0:
        raise DegenerateSampleError("no fluid elements (SDF > 0) in this sample")
    true_rows = np.asarray(true_rows, dtype=np.float64)
    return MaskedCenters(
        pred_values=stencil.values(pred_rows),
        pred_gradients=stencil.gradients(pred_rows),
        true_values=stencil.values_forward(true_rows),
        true_gradients=stencil.gradients_forward(true_rows),
        mask=mask,
        h=stencil.h,
        grid_n_out=n_out,
        sampled_fraction=sampled_fraction,
    )


# ---------------------------------------------------------------- terms

def velocity_term(mc: MaskedCenters, w: LossWeights):
    weight = mc.mask[:, None] * w.velocity[None, :]
    return ad.scale(ad.weighted_sq_error(mc.pred_values, mc.true_values, weight), mc.norm)


def derivative_term(mc: MaskedCenters, w: LossWeights):
    weight = mc.mask[:, None, None] * w.gradient[None]
    err = ad.weighted_sq_error(mc.pred_gradients, mc.true_gradients, weight)
    return ad.scale(err, mc.norm * w.h)


def boundary_term(pred_rows, true_rows, w: LossWeights, bs: BoundarySets):
    pred_rows = ad.constant(pred_rows)
    weight = bs.weights(pred_rows.shape[0], w.normalize_boundary)
    return ad.scale(ad.weighted_sq_error(pred_rows, true_rows, weight), w.boundary)


def solenoidality_term(mc: MaskedCenters, w: LossWeights, div=None):
    div = fem.divergence(mc.pred_gradients) if div is None else ad.constant(div)
    err = ad.weighted_sq_error(div, np.zeros(div.shape), mc.mask.astype(np.float64))
    return ad.scale(err, mc.norm * w.solenoidality * w.h)


# ---------------------------------------------------------------- losses

def _require_fluid(mc):
    if mc.n_out == 0:
        raise DegenerateSampleError("no fluid elements (SDF > 0) in this sample")


def loss_L1(mc: MaskedCenters, w: LossWeights):
    _require_fluid(mc)
    return velocity_term(mc, w)


def loss_L2(mc: MaskedCenters, w: LossWeights):
    return ad.add(loss_L1(mc, w), derivative_term(mc, w))


def loss_L3(mc: MaskedCenters, w: LossWeights, bs: BoundarySets, pred_rows, true_rows):
    _require_fluid(mc)
    return ad.add(derivative_term(mc, w), boundary_term(pred_rows, true_rows, w, bs))


def loss_L4(mc: MaskedCenters, w: LossWeights, bs: BoundarySets, pred_rows, true_rows, div=None):
    return ad.add(loss_L3(mc, w, bs, pred_rows, true_rows), solenoidality_term(mc, w, div))


def compute_loss(loss_id, mc, w, bs=None, pred_rows=None, true_rows=None):
    if loss_id == "L1":
        return loss_L1(mc, w)
    if loss_id == "L2":
        return loss_L2(mc, w)
    if loss_id not in LOSS_IDS:
        raise ConfigurationError(f"unknown loss {loss_id!r}; valid: {', '.join(LOSS_IDS)}")
    if bs is None or pred_rows is None or true_rows is None:
        raise ConfigurationError(f"{loss_id} needs boundary sets and nodal rows")
    if loss_id == "L3":
        return loss_L3(mc, w, bs, pred_rows, true_rows)
    return loss_L4(mc, w, bs, pred_rows, true_rows)


def needs_boundary(loss_id):
    return loss_id in ("L3", "L4")


def batch_mean(losses):
    """Mean of per-sample scalar losses."""
    acc = losses[0]
    for item in losses[1:]:
        acc = ad.add(acc, item)
    return ad.scale(acc, 1.0 / len(losses))
