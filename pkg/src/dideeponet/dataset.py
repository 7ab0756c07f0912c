"""Dataset container, NPZ layout, train/test splits and a manufactured flow dataset.

Tensors follow the dataset layout ``[sample][channel][x][y][z]``: inputs
hold (SDF, Reynolds) and outputs hold (u, v, w, p). Pressure is carried
through I/O untouched and never used.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import fem, geometry
from .errors import ConfigurationError, FormatError, ValidationError
from .npyio import FLOAT_DTYPES, read_npz, write_npz

log = logging.getLogger(__name__)

RE_MIN, RE_MAX = 10.0, 1000.0
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class Dataset:
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.outputs = np.ascontiguousarray(self.outputs, dtype=np.float64)
        self.validate()

    def validate(self):
        X, Y = self.inputs, self.outputs
        if X.ndim != 5 or Y.ndim != 5:
            raise ValidationError(f"expected 5-D tensors, got {X.shape} and {Y.shape}")
        if X.shape[1] != 2 or Y.shape[1] != 4:
            raise ValidationError(f"expected 2 input and 4 output channels, got {X.shape[1]} and {Y.shape[1]}")
        if X.shape[0] == 0:
            raise ValidationError("dataset has no samples")
        if X.shape[0] != Y.shape[0] or X.shape[2:] != Y.shape[2:]:
            raise ValidationError(f"input {X.shape} and output {Y.shape} disagree")
        if len(set(X.shape[2:])) != 1:
            raise ValidationError(f"grids must be cubic, got {X.shape[2:]}")
        re = X[:, 1].reshape(X.shape[0], -1)
        for i in range(X.shape[0]):
            if re[i].min() != re[i].max():
                raise ValidationError(f"sample {i}: Reynolds channel is not spatially constant")
            if not RE_MIN <= re[i, 0] <= RE_MAX:
                raise ValidationError(f"sample {i}: Reynolds number {re[i, 0]} outside [10, 1000]")
        if not np.isfinite(Y[:, :3]).all():
            raise ValidationError("velocity channels contain non-finite values")

    @property
    def n_samples(self):
        return self.inputs.shape[0]

    @property
    def G(self):
        return self.inputs.shape[2]

    @property
    def h(self):
        return fem.spacing(self.G)

    @property
    def reynolds(self):
        return self.inputs[:, 1, 0, 0, 0].copy()

    def sdf(self, i):
        return self.inputs[i, 0]

    def velocity(self, i):
        return fem.NodalField(*self.outputs[i, :3])

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.inputs[idx], self.outputs[idx])


# ---------------------------------------------------------------- file I/O

def dataset_paths(prefix):
    """Dataset file naming: ``<prefix>_X.npz`` and ``<prefix>_Y.npz``."""
    prefix = str(prefix)
    for suffix in ("_X.npz", "_Y.npz"):
        if prefix.endswith(suffix):
            prefix = prefix[: -len(suffix)]
    return prefix + "_X.npz", prefix + "_Y.npz"


def _single_array(path):
    arrays, _ = read_npz(path, allowed=FLOAT_DTYPES)
    if len(arrays) != 1:
        raise FormatError(f"{path}: expected exactly one array, found {sorted(arrays)}", offset=0)
    (arr,) = arrays.values()
    if arr.ndim != 5:
        raise FormatError(f"{path}: expected a 5-D array, got shape {arr.shape}", offset=0)
    return arr.astype(np.float64)


def read_dataset(path_x, path_y=None):
    if path_y is None:
        path_x, path_y = dataset_paths(path_x)
    return Dataset(_single_array(path_x), _single_array(path_y))


def write_dataset(ds: Dataset, path_x, path_y=None, float32=False):
    if ds.n_samples == 0:
        raise ValidationError("refusing to write an empty dataset")
    if path_y is None:
        path_x, path_y = dataset_paths(path_x)
    dtype = np.float32 if float32 else np.float64
    write_npz(path_x, {"data": ds.inputs.astype(dtype)})
    write_npz(path_y, {"data": ds.outputs.astype(dtype)})


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitSpec:
    kind: str = "random"
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random", "extrapolatory"):
            raise ConfigurationError(f"split kind must be random or extrapolatory, got {self.kind!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def _n_train(n, fraction):
    k = math.ceil(fraction * n - 1e-9)
    return min(max(k, 1), n - 1)


def split(reynolds, spec: SplitSpec):
    """(train, test) sample indices, each sorted ascending.

    ``reynolds`` may be a :class:`Dataset` or the per-sample Reynolds numbers.
    Extrapolatory splits sort by Reynolds number (ties by index) and hold out
    the top fraction.
    """
    re = reynolds.reynolds if isinstance(reynolds, Dataset) else np.asarray(reynolds, dtype=np.float64)
    n = len(re)
    if n < 5:
        raise ConfigurationError(f"need at least 5 samples to split, got {n}")
    k = _n_train(n, spec.train_fraction)
    if spec.kind == "random":
        order = np.random.default_rng(spec.seed).permutation(n)
    else:
        order = np.lexsort((np.arange(n), re))
    return np.sort(order[:k]), np.sort(order[k:])


def write_split_manifest(path, reynolds, train, test):
    labels = {int(i): "train" for i in train}
    labels.update({int(i): "test" for i in test})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "reynolds", "split"])
        for i in sorted(labels):
            w.writerow([i, repr(float(reynolds[i])), labels[i]])


def read_split_manifest(path):
    train, test = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            (train if row["split"] == "train" else test).append(int(row["sample"]))
    return np.array(train, dtype=np.int64), np.array(test, dtype=np.int64)


# ---------------------------------------------------------------- pooling

def downsample_sdf(grid, target=8):
    """Block-mean pooling of a cubic grid to ``target**3`` values (flattened, C order)."""
    grid = np.asarray(grid, dtype=np.float64)
    G = grid.shape[0]
    if G < target:
        raise ConfigurationError(f"grid resolution {G} is below the pooling target {target}")
    if G % target:
        padded = math.ceil(G / target) * target
        log.warning("padding %d^3 SDF grid to %d^3 by edge replication before pooling", G, padded)
        grid = np.pad(grid, [(0, padded - G)] * 3, mode="edge")
        G = padded
    b = G // target
    return grid.reshape(target, b, target, b, target, b).mean(axis=(1, 3, 5)).ravel()


# ---------------------------------------------------------------- manufactured flow

_PHASES = np.array([0.3, 1.1, 0.7, 1.9, 0.5, 1.3])


def wavenumber(re):
    """Spatial frequency of the vector potential; grows with log10(Re) from pi to 2*pi."""
    return np.pi * (0.5 + 0.5 * np.log10(re))


def _potential(points, re):
    """Vector potential psi and its curl at ``points`` for Reynolds number ``re``."""
    k = wavenumber(re)
    amp = 1.0 / k
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    a = _PHASES
    sy1, cy1 = np.sin(k * y + a[0]), np.cos(k * y + a[0])
    sz2, cz2 = np.sin(k * z + a[1]), np.cos(k * z + a[1])
    sz3, cz3 = np.sin(k * z + a[2]), np.cos(k * z + a[2])
    sx4, cx4 = np.sin(k * x + a[3]), np.cos(k * x + a[3])
    sx5, cx5 = np.sin(k * x + a[4]), np.cos(k * x + a[4])
    sy6, cy6 = np.sin(k * y + a[5]), np.cos(k * y + a[5])
    psi = amp * np.stack([sy1 * sz2, sz3 * sx4, sx5 * sy6], axis=1)
    # psi = (P(y,z), Q(z,x), R(x,y))
    dR_dy, dQ_dz = k * sx5 * cy6, k * cz3 * sx4
    dP_dz, dR_dx = k * sy1 * cz2, k * cx5 * sy6
    dQ_dx, dP_dy = k * sz3 * cx4, k * cy1 * sz2
    curl = amp * np.stack([dR_dy - dQ_dz, dP_dz - dR_dx, dQ_dx - dP_dy], axis=1)
    return psi, curl


def _ramp(s, start, width):
    t = np.clip((s - start) / width, 0.0, 1.0)
    chi = t**3 * (10.0 - 15.0 * t + 6.0 * t * t)
    dchi = 30.0 * t * t * (1.0 - t) ** 2 / width
    return chi, dchi


def velocity_bound(ramp_width):
    """Upper bound on |u| for the manufactured field (k >= pi, unit-scaled potential)."""
    return 2.0 * math.sqrt(3.0) + (1.875 / ramp_width) * math.sqrt(3.0) / math.pi


# If the corner mean of a 1-Lipschitz field is <= 0, no corner exceeds
# h * (sum of corner-to-corner distances) / 8 = h * (3 + 3*sqrt(2) + sqrt(3)) / 8.
CORNER_BOUND = (3.0 + 3.0 * math.sqrt(2.0) + math.sqrt(3.0)) / 8.0


def default_ramp_start(G, mesh_tolerance=2e-3):
    """Level at which the ramp starts, so elements with centroid SDF <= 0 see zero velocity.

    ``mesh_tolerance`` covers the gap between mesh and exact distance for
    shapes voxelized from a triangulation.
    """
    return 1.01 * CORNER_BOUND * fem.spacing(G) + mesh_tolerance


def manufactured_velocity(spec, re, points, ramp_start, ramp_width=0.5):
    """u = curl(chi(phi) * psi): exactly solenoidal, zero wherever phi <= ramp_start."""
    phi, grad_phi = geometry.level_function(spec, points)
    psi, curl = _potential(points, re)
    chi, dchi = _ramp(phi, ramp_start, ramp_width)
    return chi[:, None] * curl + dchi[:, None] * np.cross(grad_phi, psi)


def reynolds_schedule(n_per_geometry, offset_low, offset_high):
    """Low-discrepancy Reynolds numbers alternating between [10, 100] and [100, 1000]."""
    out = []
    for k in range(n_per_geometry):
        j = k // 2
        if k % 2 == 0:
            out.append(10.0 + 90.0 * ((offset_low + j * GOLDEN) % 1.0))
        else:
            out.append(100.0 + 900.0 * ((offset_high + j * GOLDEN) % 1.0))
    return out


def synth_dataset(n_samples, G, seed=0, catalog=None, ramp_start=None, ramp_width=0.5,
                  subdivisions=64, per_geometry=10, threads=None):
    """Manufactured-solution dataset standing in for the CFD data.

    Consecutive blocks of ``per_geometry`` samples share one randomly chosen
    catalog shape; within a block, Reynolds numbers alternate between the
    low and high decades.
    """
    if G < 8:
        raise ConfigurationError(f"synthetic grids need G >= 8, got {G}")
    catalog = geometry.build_catalog(seed) if catalog is None else list(catalog)
    if not catalog:
        raise ConfigurationError("catalog is empty")
    if ramp_start is None:
        ramp_start = default_ramp_start(G)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(catalog))
    pts = fem.node_coordinates(G)
    X = np.zeros((n_samples, 2, G, G, G))
    Y = np.zeros((n_samples, 4, G, G, G))
    sdf_cache = {}
    res = []
    n_geo = math.ceil(n_samples / per_geometry)
    for g in range(n_geo):
        offs = rng.random(2)
        res.extend(reynolds_schedule(per_geometry, offs[0], offs[1]))
    for i in range(n_samples):
        spec = catalog[perm[(i // per_geometry) % len(catalog)]]
        key = id(spec)
        if key not in sdf_cache:
            sdf_cache[key] = geometry.voxelize(spec, G, subdivisions, threads).grid
        re = res[i]
        vel = manufactured_velocity(spec, re, pts, ramp_start, ramp_width)
        X[i, 0] = sdf_cache[key]
        X[i, 1] = re
        Y[i, :3] = vel.T.reshape(3, G, G, G)
    return Dataset(X, Y)
