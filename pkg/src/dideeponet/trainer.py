"""Adam training loop, validation/checkpoint bookkeeping and metric evaluation."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import fem, losses, metrics, operators
from .dataset import Dataset
from .errors import ConfigurationError, NumericalError

log = logging.getLogger(__name__)

FULL_GRID_LIMIT = 32
DEFAULT_SUBSAMPLE = 8192


class TrainingDiverged(NumericalError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of ``params`` (name -> Tensor) in place.

    ``grads`` maps names to gradient arrays; missing entries count as zero.
    Every gradient is checked before any parameter moves.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.value)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class TrainConfig:
    loss: str = "L1"
    epochs: int = 200
    learning_rate: float = 1e-4
    batch_size: int = 2
    seed: int = 0
    checkpoint_interval: int = 0
    validation_fraction: float = 0.1
    # None: full grid for G <= 32, otherwise 8192 elements per step; 0: always full
    subsample_elements: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.loss not in losses.LOSS_IDS:
            raise ConfigurationError(f"loss must be one of {', '.join(losses.LOSS_IDS)}, got {self.loss!r}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError(f"validation_fraction must lie in [0, 1), got {self.validation_fraction}")
        if self.checkpoint_interval < 0:
            raise ConfigurationError("checkpoint_interval must be >= 0")
        if self.subsample_elements is not None and self.subsample_elements < 0:
            raise ConfigurationError("subsample_elements must be >= 0")

    def elements_per_step(self, G):
        E = (G - 1) ** 3
        k = self.subsample_elements
        if k is None:
            k = 0 if G <= FULL_GRID_LIMIT else DEFAULT_SUBSAMPLE
        return None if k == 0 or k >= E else k


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, epoch, train, val, seconds):
        self.epoch.append(epoch)
        self.train_loss.append(train)
        self.val_loss.append(val)
        self.seconds.append(seconds)

    def __len__(self):
        return len(self.epoch)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for row in zip(self.epoch, self.train_loss, self.val_loss, self.seconds):
                w.writerow([row[0], repr(row[1]), repr(row[2]), f"{row[3]:.3f}"])

    @classmethod
    def read_csv(cls, path):
        h = cls()
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                h.append(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["seconds"]))
        return h


@dataclass
class TrainResult:
    params: operators.ModelParams
    history: TrainHistory
    checkpoints: list
    validation: np.ndarray
    best_epoch: int


# ---------------------------------------------------------------- per-sample loss

class SampleContext:
    """Inputs, targets and fluid mask of one sample, prepared once."""

    def __init__(self, ds: Dataset, index, op_config: operators.OperatorConfig):
        self.index = int(index)
        self.G = ds.G
        sdf = ds.sdf(index)
        self.branch, self.trunk = operators.sample_inputs(op_config, sdf, ds.reynolds[index])
        self.truth = ds.velocity(index).as_rows()
        self.mask = fem.fluid_mask(sdf)
        self.n_out = int(self.mask.sum())


class GridCache:
    def __init__(self, G):
        self.G = G
        self.h = fem.spacing(G)
        self.corners = fem.element_corners(G)
        self.stencil = fem.CenterStencil(self.corners, self.h, G**3)
        self.boundary = losses.BoundarySets.for_grid(G)
        self.boundary_nodes = self.boundary.all_nodes()


def sample_loss(params, op_config, ctx: SampleContext, grid: GridCache, loss_id, weights,
                elements=None):
    """Loss of one sample on the full grid or on a subset of elements.

    A subset is treated as a uniform draw: element sums are rescaled by E/k so
    the expected value equals the full-grid loss; boundary terms stay complete.
    """
    boundary = losses.needs_boundary(loss_id)
    if elements is None:
        pred = operators.forward(params, op_config, ctx.branch, ctx.trunk)
        mc = losses.masked_centers(pred, ctx.truth, grid.stencil, ctx.mask)
        return losses.compute_loss(loss_id, mc, weights, grid.boundary if boundary else None,
                                   pred, ctx.truth)
    elements = np.asarray(elements, dtype=np.int64)
    corners = grid.corners[elements]
    pieces = [corners.ravel()] + ([grid.boundary_nodes] if boundary else [])
    nodes = np.unique(np.concatenate(pieces))
    stencil = fem.CenterStencil(np.searchsorted(nodes, corners), grid.h, len(nodes))
    pred = operators.forward(params, op_config, ctx.branch, ctx.trunk[nodes])
    truth = ctx.truth[nodes]
    mc = losses.masked_centers(pred, truth, stencil, ctx.mask[elements], n_out=ctx.n_out,
                               sampled_fraction=len(elements) / len(grid.corners))
    bs = grid.boundary.restricted(nodes) if boundary else None
    return losses.compute_loss(loss_id, mc, weights, bs, pred, truth)


def batch_loss(params, op_config, contexts, grid: GridCache, loss_id, weights, elements=None):
    """Mean per-sample loss over a batch.

    On the full grid the DeepONet trunk sees identical coordinates for every
    sample, so it is evaluated once and shared by all branch vectors.
    """
    if elements is None:
        elements = [None] * len(contexts)
    shared = op_config.variant == "deeponet" and all(e is None for e in elements)
    if not shared:
        items = [sample_loss(params, op_config, c, grid, loss_id, weights, e)
                 for c, e in zip(contexts, elements)]
        return losses.batch_mean(items)
    boundary = grid.boundary if losses.needs_boundary(loss_id) else None
    t = operators.mlp(params, "trunk", contexts[0].trunk, operators.depth(op_config, "trunk"))
    items = []
    for c in contexts:
        b = operators.mlp(params, "branch", c.branch, operators.depth(op_config, "branch"))
        pred = ad.head_sum(ad.mul(b, t), op_config.n_outputs)
        mc = losses.masked_centers(pred, c.truth, grid.stencil, c.mask)
        items.append(losses.compute_loss(loss_id, mc, weights, boundary, pred, c.truth))
    return losses.batch_mean(items)


def validation_split(train_idx, fraction, seed):
    """(fit, validation) index arrays carved from the training indices."""
    train_idx = np.asarray(train_idx, dtype=np.int64)
    n_val = int(round(fraction * len(train_idx)))
    if fraction > 0 and len(train_idx) >= 2:
        n_val = min(max(n_val, 1), len(train_idx) - 1)
    else:
        n_val = 0
    order = np.random.default_rng([seed, 7]).permutation(len(train_idx))
    return np.sort(train_idx[order[n_val:]]), np.sort(train_idx[order[:n_val]])


def _mean_loss(params, op_config, contexts, grid, loss_id, weights):
    if not contexts:
        return math.nan
    return float(batch_loss(params.detached(), op_config, contexts, grid, loss_id, weights).value)


# ---------------------------------------------------------------- training

def train(ds: Dataset, train_idx, config: TrainConfig, op_config: operators.OperatorConfig,
          weight_overrides=None, checkpoint_dir=None, params=None, metadata=None):
    """Fit an operator on ``train_idx``; returns a :class:`TrainResult`.

    Deterministic given (dataset, indices, configs). On a non-finite loss or
    gradient the previous parameters are saved as ``last_good.npz`` (when a
    checkpoint directory is set) and :class:`TrainingDiverged` is raised.
    """
    G = ds.G
    if G % op_config.pool or G < op_config.pool:
        raise ConfigurationError(f"grid resolution {G} is incompatible with pooling target {op_config.pool}")
    weights = losses.LossWeights.for_grid(G, **(weight_overrides or {}))
    fit_idx, val_idx = validation_split(train_idx, config.validation_fraction, config.seed)
    if len(fit_idx) == 0:
        raise ConfigurationError("no training samples")
    grid = GridCache(G)
    fit = [SampleContext(ds, i, op_config) for i in fit_idx]
    val = [SampleContext(ds, i, op_config) for i in val_idx]
    for c in fit + val:
        if c.n_out == 0:
            raise ConfigurationError(f"sample {c.index} has no fluid elements")
    params = operators.init_params(op_config, config.seed) if params is None else params
    rng = np.random.default_rng([config.seed, 1])
    k = config.elements_per_step(G)
    E = len(grid.corners)
    state = AdamState()
    history = TrainHistory()
    saved = []
    best_val, best_epoch = math.inf, 0
    meta = {"seed": config.seed, "resolution": G, "loss": config.loss,
            "train_config": asdict(config), "validation": [int(i) for i in val_idx],
            **(metadata or {})}

    def save(name, epoch, p=None, **extra):
        if checkpoint_dir is None:
            return None
        path = os.path.join(checkpoint_dir, name)
        operators.save_checkpoint(path, p if p is not None else params, op_config,
                                  epoch=epoch, **meta, **extra)
        saved.append(path)
        return path

    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(fit))
        batch_losses = []
        for b in range(0, len(order), config.batch_size):
            batch = [fit[j] for j in order[b:b + config.batch_size]]
            params.zero_grad()
            elements = None
            if k is not None:
                elements = [np.sort(rng.choice(E, size=k, replace=False)) for _ in batch]
            loss = batch_loss(params, op_config, batch, grid, config.loss, weights, elements)
            value = float(loss.value)
            if math.isfinite(value):
                ad.backward(loss)
            grads = {name: p.grad for name, p in params.items()}
            if not math.isfinite(value):
                path = save("last_good.npz", epoch - 1)
                raise TrainingDiverged(f"non-finite training loss at epoch {epoch}", path)
            try:
                adam_step(params, grads, state, config.learning_rate,
                          config.beta1, config.beta2, config.eps)
            except NumericalError as exc:
                path = save("last_good.npz", epoch - 1)
                raise TrainingDiverged(f"epoch {epoch}: {exc}", path) from None
            batch_losses.append(value)
        params.zero_grad()
        train_loss = float(np.mean(batch_losses))
        val_loss = _mean_loss(params, op_config, val, grid, config.loss, weights)
        history.append(epoch, train_loss, val_loss, time.perf_counter() - t0)
        log.info("epoch %d train %.6g val %.6g", epoch, train_loss, val_loss)
        monitor = val_loss if val else train_loss
        if not math.isfinite(monitor):
            path = save("last_good.npz", epoch - 1)
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", path)
        if monitor < best_val:
            best_val, best_epoch = monitor, epoch
            save("best.npz", epoch, val_loss=val_loss)
        if config.checkpoint_interval and epoch % config.checkpoint_interval == 0:
            save(f"epoch_{epoch:04d}.npz", epoch, val_loss=val_loss)
    save("final.npz", config.epochs, val_loss=history.val_loss[-1])
    return TrainResult(params, history, saved, val_idx, best_epoch)


# ---------------------------------------------------------------- evaluation

def evaluate_predictions(predictions, ds: Dataset, indices, model="deeponet", loss="L1",
                         split="random"):
    """MetricsReport from nodal predictions aligned with ``indices``."""
    report = metrics.MetricsReport(model, loss, split)
    for pred, i in zip(predictions, indices):
        report.add(int(i), metrics.sample_metrics(pred, ds.velocity(i), ds.sdf(i), sample=int(i)))
    return report


def evaluate(params, op_config: operators.OperatorConfig, ds: Dataset, indices, loss="L1",
             split="random", resolution=None):
    """Full-grid inference and M1-M4 on the given samples."""
    if resolution is not None and int(resolution) != ds.G:
        raise ConfigurationError(f"dataset resolution {ds.G} does not match checkpoint resolution {resolution}")
    preds = (operators.predict(params, op_config, ds.sdf(i), ds.reynolds[i]) for i in indices)
    return evaluate_predictions(preds, ds, indices, op_config.variant, loss, split)


def evaluate_checkpoint(path, ds: Dataset, indices, split="random"):
    ck = operators.load_checkpoint(path)
    return evaluate(ck.params, ck.config, ds, indices, ck.metadata.get("loss", "L1"), split,
                    ck.metadata.get("resolution"))
