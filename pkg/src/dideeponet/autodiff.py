"""Minimal reverse-mode differentiation over float64 numpy arrays.

The graph is a tape rebuilt on every forward pass: each op returns a new
:class:`Tensor` holding references to its parents and a closure that pushes
the output gradient back to them. Only the primitives needed by the operator
networks, the element-center stencils and the losses are provided.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError, UsageError

__all__ = [
    "Tensor",
    "parameter",
    "constant",
    "affine",
    "relu",
    "sine",
    "identity",
    "mul",
    "add",
    "scale",
    "head_sum",
    "reshape",
    "total",
    "mean",
    "weighted_sq_error",
    "linear",
    "backward",
    "grad_check",
]


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def grad_or_zeros(self):
        return np.zeros_like(self.value) if self.grad is None else self.grad

    def backward(self):
        backward(self)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.value.shape)
        else:
            self.grad += g

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(value, name=None):
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def constant(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _node(value, parents, backward_fn):
    parents = tuple(parents)
    out = Tensor(value, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward_fn
    return out


def affine(x, weight, bias):
    """``x @ weight.T + bias`` for a vector ``x`` of length n or a batch of rows (N, n)."""
    x, weight, bias = constant(x), constant(weight), constant(bias)
    if weight.value.ndim != 2 or bias.value.ndim != 1:
        raise ConfigurationError(
            f"affine expects a 2-D weight and 1-D bias, got {weight.shape} and {bias.shape}"
        )
    m, n = weight.shape
    if x.shape[-1] != n or bias.shape[0] != m or x.value.ndim not in (1, 2):
        raise ConfigurationError(
            f"affine shape mismatch: input {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    xv, wv = x.value, weight.value
    out = xv @ wv.T + bias.value

    def _back(g):
        if x.requires_grad:
            x._accumulate(g @ wv)
        if weight.requires_grad:
            weight._accumulate(np.outer(g, xv) if xv.ndim == 1 else g.T @ xv)
        if bias.requires_grad:
            bias._accumulate(g if g.ndim == 1 else g.sum(axis=0))

    return _node(out, (x, weight, bias), _back)


def relu(x):
    x = constant(x)
    active = x.value > 0.0
    out = np.where(active, x.value, 0.0)

    def _back(g):
        # subgradient at exactly zero is 0
        x._accumulate(g * active)

    return _node(out, (x,), _back)


def sine(x, omega0=30.0):
    if omega0 <= 0:
        raise ConfigurationError(f"sine activation needs omega0 > 0, got {omega0}")
    x = constant(x)
    arg = omega0 * x.value
    out = np.sin(arg)

    def _back(g):
        x._accumulate(g * (omega0 * np.cos(arg)))

    return _node(out, (x,), _back)


def identity(x):
    return constant(x)


def mul(a, b):
    """Elementwise product. A 1-D operand of length k may scale every row of an (N, k) operand."""
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape:
        rowwise = (
            (av.ndim == 1 and bv.ndim == 2 and bv.shape[1] == av.shape[0])
            or (bv.ndim == 1 and av.ndim == 2 and av.shape[1] == bv.shape[0])
        )
        if not rowwise:
            raise ConfigurationError(f"mul shape mismatch: {av.shape} vs {bv.shape}")
    out = av * bv

    def _reduce_to(g, shape):
        return g.sum(axis=0) if g.shape != shape else g

    def _back(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * bv, av.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * av, bv.shape))

    return _node(out, (a, b), _back)


def add(a, b):
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ConfigurationError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def _back(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _node(a.value + b.value, (a, b), _back)


def scale(x, c):
    x = constant(x)
    c = float(c)

    def _back(g):
        x._accumulate(g * c)

    return _node(x.value * c, (x,), _back)


def head_sum(x, n_heads):
    """Split the last axis into ``n_heads`` contiguous blocks and sum each block."""
    x = constant(x)
    width = x.shape[-1]
    if width % n_heads:
        raise ConfigurationError(f"last axis {width} not divisible into {n_heads} heads")
    p = width // n_heads
    lead = x.shape[:-1]
    out = x.value.reshape(*lead, n_heads, p).sum(axis=-1)

    def _back(g):
        x._accumulate(np.repeat(g, p, axis=-1))

    return _node(out, (x,), _back)


def reshape(x, shape):
    x = constant(x)
    old = x.shape

    def _back(g):
        x._accumulate(g.reshape(old))

    return _node(x.value.reshape(shape), (x,), _back)


def total(x):
    x = constant(x)

    def _back(g):
        x._accumulate(np.full(x.shape, float(g)))

    return _node(np.asarray(x.value.sum()), (x,), _back)


def mean(x):
    return scale(total(x), 1.0 / max(x.value.size, 1))


def weighted_sq_error(pred, target, weight):
    """Scalar ``sum(weight * (pred - target)**2)``; ``target`` and ``weight`` are constants."""
    pred = constant(pred)
    target = np.asarray(target.value if isinstance(target, Tensor) else target, dtype=np.float64)
    weight = np.broadcast_to(np.asarray(weight, dtype=np.float64), pred.shape)
    diff = pred.value - target
    out = np.asarray(np.sum(weight * diff * diff))

    def _back(g):
        pred._accumulate(2.0 * float(g) * weight * diff)

    return _node(out, (pred,), _back)


def linear(x, forward, adjoint):
    """Apply a fixed linear map. ``adjoint`` must be the exact transpose of ``forward``."""
    x = constant(x)
    out = forward(x.value)

    def _back(g):
        x._accumulate(adjoint(g))

    return _node(out, (x,), _back)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Propagate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Gradients accumulate: calling this twice without zeroing adds the
    contributions, like most tape libraries.
    """
    if loss.value.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    if loss._backward is None:
        loss._accumulate(np.ones_like(loss.value))
        return
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        g, node.grad = node.grad, None
        node._backward(g)


def grad_check(function: Callable[[], Tensor], params: Sequence[Tensor], eps=1e-6,
               entries=None, rng=None):
    """Largest relative gap between analytic and central-difference gradients.

    ``function`` rebuilds the graph from ``params`` on every call. The error
    for one entry is ``|a - n| / max(|a|, |n|, 1e-12)``. ``entries`` caps the
    number of randomly chosen entries checked per parameter (all by default).
    """
    if not 1e-8 <= eps <= 1e-4:
        raise UsageError(f"eps must lie in [1e-8, 1e-4], got {eps}")
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.zero_grad()
    loss = function()
    names = [p.name or f"param[{k}]" for k, p in enumerate(params)]
    if not np.isfinite(loss.value).all():
        raise NumericalError(f"function value is not finite at the base point of {', '.join(names)}")
    backward(loss)
    worst = 0.0
    for k, p in enumerate(params):
        label = names[k]
        analytic = p.grad_or_zeros()
        if not np.isfinite(analytic).all():
            raise NumericalError(f"non-finite analytic gradient for {label}")
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if entries is not None and entries < flat.size:
            idx = rng.choice(flat.size, size=entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(np.asarray(function().value).reshape(-1)[0])
            flat[i] = orig - eps
            fm = float(np.asarray(function().value).reshape(-1)[0])
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericalError(f"non-finite function value while perturbing {label}[{i}]")
            numeric = (fp - fm) / (2.0 * eps)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst
