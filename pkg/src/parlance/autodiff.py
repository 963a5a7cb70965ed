"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps a float64 ndarray. Every differentiable operation records a
TapeNode holding its parents and a backward closure; `backward(loss)` walks
the tape in reverse topological order and accumulates gradients into every
tensor that requires them. Training runs in float64 so finite-difference
checks are clean; narrower storage is a checkpoint concern, not a compute one.
"""

from __future__ import annotations

import ctypes
import math
import sys
from contextlib import contextmanager

import numpy as np

_GELU_C = math.sqrt(2.0 / math.pi)


def _tune_allocator():
    # Training churns through multi-MB temporaries; with glibc defaults every
    # one is a fresh mmap that is returned to the OS on free, so each op pays
    # page-fault cost again. Keeping large blocks on the heap roughly halves
    # step time on this workload. (-3 = M_MMAP_THRESHOLD, -1 = M_TRIM_THRESHOLD)
    if not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)
        libc.mallopt(-1, 1 << 30)
    except OSError:
        pass


_tune_allocator()

# Large finite negative used for attention masking; exp() underflows to exactly
# 0.0 after max-subtraction, so masked positions have bitwise-zero influence.
NEG_MASK = -1e9

# Module switches. Finite checking costs one isfinite scan per op, so it is
# opt-in (tests turn it on); grad recording is suspended inside no_grad().
_check_finite = False
_grad_enabled = True


def set_finite_checks(enabled: bool) -> None:
    global _check_finite
    _check_finite = bool(enabled)


@contextmanager
def no_grad():
    """Disable tape recording, e.g. for decoding and evaluation passes."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class TapeNode:
    """One recorded op: parents and the closure producing their gradients."""

    __slots__ = ("op", "parents", "backward_fn", "consumed")

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    """Dense float64 array with an optional gradient and tape linkage."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars and ndarrays are wrapped as constant tensors.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op, data, parents, backward_fn):
    """Wrap an op result, recording a tape node when gradients are live."""
    if _check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op {op!r}")
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out.node = TapeNode(op, tuple(parents), backward_fn)
    return out


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise and shape ops


def add(a, b):
    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make("add", a.data + b.data, (a, b), backward)


def sub(a, b):
    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make("sub", a.data - b.data, (a, b), backward)


def mul(a, b):
    def backward(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make("mul", a.data * b.data, (a, b), backward)


def div(a, b):
    def backward(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make("div", a.data / b.data, (a, b), backward)


def exp(x):
    out_data = np.exp(x.data)

    def backward(g):
        return (g * out_data,)

    return _make("exp", out_data, (x,), backward)


def log(x):
    def backward(g):
        return (g / x.data,)

    return _make("log", np.log(x.data), (x,), backward)


def sigmoid(x):
    out_data = 1.0 / (1.0 + np.exp(-np.clip(x.data, -500, 500)))

    def backward(g):
        return (g * out_data * (1.0 - out_data),)

    return _make("sigmoid", out_data, (x,), backward)


def gelu(x):
    """GELU in the tanh form (GPT-2 convention).

    0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 x^3))); the backward pass
    reuses the saved tanh, so it is transcendental-free.
    """
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * (xd * xd * xd))
    t = np.tanh(inner)

    def backward(g):
        sech2 = 1.0 - t * t
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * sech2 * _GELU_C * (1.0 + 0.134145 * xd * xd)),)

    return _make("gelu", 0.5 * xd * (1.0 + t), (x,), backward)


def reshape(x, shape):
    old_shape = x.data.shape

    def backward(g):
        return (g.reshape(old_shape),)

    return _make("reshape", x.data.reshape(shape), (x,), backward)


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    # Contiguous output keeps downstream matmuls on fast BLAS paths.
    return _make("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def getitem(x, index):
    out_data = x.data[index]
    advanced = isinstance(index, (np.ndarray, list)) or (
        isinstance(index, tuple) and any(isinstance(i, (np.ndarray, list)) for i in index)
    )

    def backward(g):
        gx = np.zeros_like(x.data)
        if advanced:
            np.add.at(gx, index, g)  # duplicate indices must accumulate
        else:
            gx[index] = g
        return (gx,)

    return _make("getitem", out_data, (x,), backward)


def sum_(x, axis=None, keepdims=False):
    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _make("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        count = x.data.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, x.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.data.shape).copy(),)

    return _make("mean", x.data.mean(axis=axis, keepdims=keepdims), (x,), backward)


# ---------------------------------------------------------------------------
# Linear algebra


def matmul(a, b):
    """Matrix product with batched leading dimensions (ndim >= 2 each side)."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul requires operands with ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return ga, gb

    return _make("matmul", np.matmul(a.data, b.data), (a, b), backward)


# ---------------------------------------------------------------------------
# Neural-net primitives


def softmax(x, axis=-1):
    """Numerically stable softmax; rows on `axis` sum to one."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return ((g - dot) * out_data,)

    return _make("softmax", out_data, (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv_std
    out_data = y * gain.data + bias.data

    def backward(g):
        n = x.data.shape[-1]
        gy = g * gain.data
        # d/dx of (x - mu) * inv_std with mu, var both functions of x
        gx = inv_std * (
            gy
            - gy.mean(axis=-1, keepdims=True)
            - y * (gy * y).mean(axis=-1, keepdims=True)
        )
        reduce_axes = tuple(range(g.ndim - 1))
        ggain = (g * y).sum(axis=reduce_axes) if reduce_axes else g * y
        gbias = g.sum(axis=reduce_axes) if reduce_axes else g
        return gx, ggain.reshape(gain.data.shape), gbias.reshape(bias.data.shape)

    return _make("layer_norm", out_data, (x, gain, bias), backward)


def embedding(table, ids):
    """Row lookup table[ids]; backward scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError("embedding id out of range")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make("embedding", table.data[ids], (table,), backward)


def cross_entropy(logits, targets, mask=None):
    """Mean negative log-likelihood of integer `targets` under `logits`.

    logits has shape (..., V); targets the matching leading shape. With a
    `mask` (same shape as targets, 0/1), the mean runs over unmasked
    positions only.
    """
    targets = np.asarray(targets)
    vocab = logits.data.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise IndexError("target id out of range for cross_entropy")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1)) + logits.data.max(axis=-1)
    picked = np.take_along_axis(logits.data, targets[..., None], axis=-1)[..., 0]
    nll = lse - picked
    if mask is None:
        weight = np.ones_like(nll)
    else:
        weight = np.asarray(mask, dtype=np.float64)
    total = weight.sum()
    if total <= 0:
        raise ValueError("cross_entropy mask selects no positions")
    loss = float((nll * weight).sum() / total)

    def backward(g):
        probs = np.exp(shifted)
        probs /= probs.sum(axis=-1, keepdims=True)
        onehot = np.zeros_like(probs)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return (g * (probs - onehot) * (weight / total)[..., None],)

    return _make("cross_entropy", np.float64(loss), (logits,), backward)


def binary_cross_entropy_with_logits(logits, labels):
    """Mean of softplus(l) - l*y, the stable form of -log p(y|l).

    Safe where sigmoid saturates to exactly 0 or 1 in float64.
    """
    labels = np.asarray(labels, dtype=np.float64)
    ld = logits.data
    per = np.maximum(ld, 0.0) - ld * labels + np.log1p(np.exp(-np.abs(ld)))
    n = per.size

    def backward(g):
        p = 1.0 / (1.0 + np.exp(-np.clip(ld, -500, 500)))
        return (g * (p - labels) / n,)

    return _make("bce_logits", np.float64(per.mean()), (logits,), backward)


def gumbel_softmax(logits, temperature, rng, hard=True):
    """Sample from softmax((logits + Gumbel)/tau) over the last axis.

    With hard=True the forward value is the one-hot argmax while the
    gradient is that of the underlying soft sample (straight-through).
    """
    if temperature <= 0:
        raise ValueError(f"gumbel_softmax temperature must be positive, got {temperature}")
    u = rng.random(logits.data.shape)
    tiny = np.finfo(np.float64).tiny
    noise = -np.log(-np.log(np.clip(u, tiny, 1.0 - 1e-16)))
    h = (logits.data + noise) / temperature
    h -= h.max(axis=-1, keepdims=True)
    e = np.exp(h)
    soft = e / e.sum(axis=-1, keepdims=True)
    if hard:
        out_data = np.zeros_like(soft)
        np.put_along_axis(out_data, soft.argmax(axis=-1)[..., None], 1.0, axis=-1)
    else:
        out_data = soft

    def backward(g):
        dot = (g * soft).sum(axis=-1, keepdims=True)
        return ((g - dot) * soft / temperature,)

    return _make("gumbel_softmax", out_data, (logits,), backward)


def dropout(x, rate, rng):
    """Inverted dropout; identity when rate is zero."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)

    def backward(g):
        return (g * keep,)

    return _make("dropout", x.data * keep, (x,), backward)


# ---------------------------------------------------------------------------
# Backward pass


def _toposort(root):
    """Iterative post-order over tape nodes reachable from `root`."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t.node.parents:
            if p.node is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate .grad on every requires_grad tensor reachable from `loss`."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss.node is None:
        if not loss.requires_grad:
            raise ValueError("loss does not require grad; nothing to differentiate")
        loss.grad = np.ones_like(loss.data)
        return
    if loss.node.consumed:
        raise RuntimeError("backward already called on this loss; rebuild the graph first")
    loss.node.consumed = True

    grads = {id(loss): np.ones_like(loss.data)}
    for t in reversed(_toposort(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g
        for p, pg in zip(t.node.parents, t.node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            if p.node is None:
                # Leaf: accumulate directly.
                p.grad = pg if p.grad is None else p.grad + pg
            else:
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg
