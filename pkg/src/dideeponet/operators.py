"""DeepONet and Geometric-DeepONet built on the autodiff layer.

Both variants predict (u, v, w) at query points from a branch vector (pooled
SDF plus normalized Reynolds number). Multi-output fusion splits 3p features
into three heads of p modes and contracts each head separately.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import fem
from .errors import ConfigurationError, FormatError
from .npyio import read_npz, write_npz

VARIANTS = ("deeponet", "geometric")
RE_SCALE = 1000.0


@dataclass(frozen=True)
class OperatorConfig:
    variant: str = "deeponet"
    branch_layers: tuple = (512, 512, 512)
    trunk_layers: tuple = (256, 256, 256)
    # hidden widths of both stage-2 networks (geometric only)
    stage2_layers: tuple = (256, 256, 256)
    modes: int = 128
    n_outputs: int = 3
    pool: int = 8
    siren_omega0: float = 30.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("branch_layers", "trunk_layers", "stage2_layers"):
            widths = tuple(int(w) for w in getattr(self, name))
            if any(w < 1 for w in widths):
                raise ConfigurationError(f"{name} widths must be >= 1, got {widths}")
            object.__setattr__(self, name, widths)
        if self.modes < 1 or self.n_outputs < 1 or self.pool < 1:
            raise ConfigurationError("modes, n_outputs and pool must all be >= 1")
        if self.siren_omega0 <= 0:
            raise ConfigurationError(f"siren_omega0 must be > 0, got {self.siren_omega0}")

    @property
    def branch_input_dim(self):
        return self.pool**3 + 1

    @property
    def trunk_input_dim(self):
        return 4 if self.variant == "geometric" else 3

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("branch_layers", "trunk_layers", "stage2_layers"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def network_shapes(config: OperatorConfig):
    """Layer dims per sub-network: name -> (dims, activation)."""
    p, k = config.modes, config.n_outputs
    if config.variant == "deeponet":
        return {
            "branch": ([config.branch_input_dim, *config.branch_layers, k * p], "relu"),
            "trunk": ([3, *config.trunk_layers, k * p], "relu"),
        }
    return {
        "branch": ([config.branch_input_dim, *config.branch_layers, p], "relu"),
        "trunk": ([4, *config.trunk_layers, p], "relu"),
        "branch2": ([p, *config.stage2_layers, k * p], "relu"),
        "trunk2": ([p, *config.stage2_layers, k * p], "sine"),
    }


class ModelParams(dict):
    """Ordered mapping ``"<net>.<layer>.weight|bias"`` -> trainable Tensor."""

    def zero_grad(self):
        for t in self.values():
            t.zero_grad()

    def arrays(self):
        return {name: t.value.copy() for name, t in self.items()}

    def detached(self):
        """Constant copies, for inference without recording a tape."""
        return ModelParams({name: ad.Tensor(t.value) for name, t in self.items()})

    @classmethod
    def from_arrays(cls, arrays):
        return cls({name: ad.parameter(np.asarray(v, dtype=np.float64), name)
                    for name, v in arrays.items()})

    def n_values(self):
        return sum(t.value.size for t in self.values())


def init_params(config: OperatorConfig, seed=0):
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for net, (dims, act) in network_shapes(config).items():
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            if act == "sine":
                bound = 1.0 / fan_in if i == 0 else np.sqrt(6.0 / fan_in) / config.siren_omega0
            else:
                bound = np.sqrt(6.0 / fan_in)
            params[f"{net}.{i}.weight"] = ad.parameter(
                rng.uniform(-bound, bound, size=(fan_out, fan_in)), f"{net}.{i}.weight")
            params[f"{net}.{i}.bias"] = ad.parameter(np.zeros(fan_out), f"{net}.{i}.bias")
    return params


def _check_params(params, config):
    for net, (dims, _) in network_shapes(config).items():
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = params.get(f"{net}.{i}.weight")
            if w is None or w.shape != (fan_out, fan_in):
                got = None if w is None else w.shape
                raise ConfigurationError(f"{net}.{i}.weight: expected {(fan_out, fan_in)}, got {got}")


def mlp(params, net, x, n_layers, activation="relu", omega0=30.0):
    """Hidden layers carry the activation; the output layer is affine."""
    for i in range(n_layers):
        x = ad.affine(x, params[f"{net}.{i}.weight"], params[f"{net}.{i}.bias"])
        if i < n_layers - 1:
            if activation == "relu":
                x = ad.relu(x)
            elif activation == "sine":
                x = ad.sine(x, omega0)
            elif activation == "identity":
                x = ad.identity(x)
            else:
                raise ConfigurationError(f"unknown activation {activation!r}")
    return x


def depth(config, net):
    return len(network_shapes(config)[net][0]) - 1


# ---------------------------------------------------------------- inputs

def branch_encode(sdf_grid, reynolds, pool=8):
    """Block-mean pool the SDF to ``pool**3`` values and append Re/1000."""
    sdf_grid = np.asarray(sdf_grid, dtype=np.float64)
    G = sdf_grid.shape[0]
    if G < pool or G % pool:
        raise ConfigurationError(f"SDF resolution {G} is not divisible by the pooling target {pool}")
    b = G // pool
    pooled = sdf_grid.reshape(pool, b, pool, b, pool, b).mean(axis=(1, 3, 5)).ravel()
    return np.concatenate([pooled, [float(reynolds) / RE_SCALE]])


def normalize_coordinates(points):
    return np.asarray(points, dtype=np.float64) - 1.0


def trunk_inputs(G, sdf_grid=None, nodes=None):
    """Trunk rows for the grid nodes (all, or the given flat node indices)."""
    pts = normalize_coordinates(fem.node_coordinates(G))
    if nodes is not None:
        pts = pts[nodes]
    if sdf_grid is None:
        return pts
    sdf = np.asarray(sdf_grid, dtype=np.float64).ravel()
    if nodes is not None:
        sdf = sdf[nodes]
    return np.concatenate([pts, sdf[:, None]], axis=1)


# ---------------------------------------------------------------- forward passes

def deeponet_forward(params, config: OperatorConfig, branch_vec, trunk_in):
    """(N, 3) velocities; ``trunk_in`` holds normalized (x, y, z) rows."""
    trunk_in = ad.constant(trunk_in)
    if trunk_in.shape[-1] != 3:
        raise ConfigurationError(f"deeponet trunk expects 3 inputs per point, got {trunk_in.shape[-1]}")
    b = mlp(params, "branch", branch_vec, depth(config, "branch"))
    t = mlp(params, "trunk", trunk_in, depth(config, "trunk"))
    return ad.head_sum(ad.mul(b, t), config.n_outputs)


def geometric_forward(params, config: OperatorConfig, branch_vec, trunk_in,
                      stage2_activation="sine"):
    """(N, 3) velocities; ``trunk_in`` holds normalized (x, y, z, sdf) rows."""
    trunk_in = ad.constant(trunk_in)
    if trunk_in.value.ndim != 2 or trunk_in.shape[1] != 4:
        raise ConfigurationError(
            f"geometric trunk expects (x, y, z, sdf) rows, got shape {trunk_in.shape}")
    b1 = mlp(params, "branch", branch_vec, depth(config, "branch"))
    t1 = mlp(params, "trunk", trunk_in, depth(config, "trunk"))
    z = ad.mul(b1, t1)
    b2 = mlp(params, "branch2", z, depth(config, "branch2"))
    t2 = mlp(params, "trunk2", z, depth(config, "trunk2"), stage2_activation, config.siren_omega0)
    return ad.head_sum(ad.mul(b2, t2), config.n_outputs)


def forward(params, config: OperatorConfig, branch_vec, trunk_in):
    if config.variant == "geometric":
        return geometric_forward(params, config, branch_vec, trunk_in)
    return deeponet_forward(params, config, branch_vec, trunk_in)


def sample_inputs(config: OperatorConfig, sdf_grid, reynolds, nodes=None):
    """Branch vector and trunk rows for one sample."""
    G = np.asarray(sdf_grid).shape[0]
    branch = branch_encode(sdf_grid, reynolds, config.pool)
    trunk = trunk_inputs(G, sdf_grid if config.variant == "geometric" else None, nodes)
    return branch, trunk


def predict(params, config: OperatorConfig, sdf_grid, reynolds, chunk=16384):
    """Full-grid nodal prediction as a :class:`fem.NodalField`, evaluated in chunks."""
    _check_params(params, config)
    G = np.asarray(sdf_grid).shape[0]
    frozen = params.detached()
    branch, trunk = sample_inputs(config, sdf_grid, reynolds)
    rows = np.empty((trunk.shape[0], config.n_outputs))
    for lo in range(0, trunk.shape[0], chunk):
        rows[lo:lo + chunk] = forward(frozen, config, branch, trunk[lo:lo + chunk]).value
    return fem.NodalField(*(rows[:, c].reshape(G, G, G) for c in range(3)))


# ---------------------------------------------------------------- checkpoints

METADATA_MEMBER = "metadata.json"


@dataclass
class Checkpoint:
    params: ModelParams
    config: OperatorConfig
    metadata: dict = field(default_factory=dict)


def save_checkpoint(path, params, config: OperatorConfig, **metadata):
    meta = {"config": config.to_dict(), **metadata}
    write_npz(path, params.arrays(), {METADATA_MEMBER: json.dumps(meta, sort_keys=True, indent=1)})


def load_checkpoint(path):
    arrays, texts = read_npz(path)
    if METADATA_MEMBER not in texts:
        raise FormatError(f"{path}: checkpoint has no {METADATA_MEMBER} member", offset=0)
    meta = json.loads(texts[METADATA_MEMBER])
    config = OperatorConfig.from_dict(meta.pop("config"))
    params = ModelParams.from_arrays(arrays)
    _check_params(params, config)
    return Checkpoint(params, config, meta)
