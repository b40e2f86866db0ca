"""Dense float64 tensors with reverse-mode automatic differentiation.

A dynamic tape: every op links its output to its inputs through a backward
closure, so the DAG for one forward pass lives in the output tensors and is
released after ``backward``. The op set is deliberately small; anything
fancier is composed from it. All math is float64 because the test suite
checks gradients against central finite differences at tight tolerances.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import NonFiniteError, ShapeError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (forward-only mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def backward(self):
        backward(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    """Create an op output, attaching the tape record only when needed."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._backward = backward_fn
        return out
    return Tensor(data)


def _accum(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss):
    """Run reverse-mode accumulation from a scalar loss.

    Every reachable tensor with requires_grad gets its .grad populated
    (accumulated, so batch-level gradient accumulation works by calling
    backward once per sample). The tape is released afterwards.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order = _topo_order(loss)
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
    # release the tape; keep gradients only on leaves
    for node in order:
        if node._backward is not None:
            node.grad = None
            node._parents = ()
            node._backward = None


def _topo_order(root):
    # iterative DFS: graphs from long sequences overflow the recursion limit
    order = []
    visited = set()
    stack = [(root, iter(root._parents))]
    visited.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in visited and p.requires_grad:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def check_finite(t, context=""):
    """Raise NonFiniteError if t contains NaN or Inf; returns t unchanged."""
    if not np.isfinite(t.data).all():
        where = f" in {context}" if context else ""
        raise NonFiniteError(f"non-finite values{where}")
    return t


# -- primitive ops ---------------------------------------------------------


def add(a, b):
    data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), bw)


def mul(a, b):
    data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), bw)


def scale(a, s):
    s = float(s)

    def bw(g):
        _accum(a, g * s)

    return _make(a.data * s, (a,), bw)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(data, (a, b), bw)


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.data.shape}")

    def bw(g):
        _accum(a, g.T)

    return _make(a.data.T.copy(), (a,), bw)


def concat(tensors, axis=0):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(t, g[tuple(idx)])

    return _make(data, tensors, bw)


def slice_(a, key):
    """Basic (non-duplicating) indexing; keeps dims when given slices."""
    data = a.data[key]

    def bw(g):
        full = np.zeros_like(a.data)
        full[key] += g
        _accum(a, full)

    return _make(data.copy(), (a,), bw)


def gather(a, indices):
    """Select rows by an integer index array; indices may repeat."""
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _make(data, (a,), bw)


def sum_(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, a.data.shape))

    return _make(data, (a,), bw)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), Tensor(1.0 / n))


def softmax(a, axis=-1, mask=None):
    """Numerically stable softmax; with a boolean mask, normalizes over the
    visible entries only and returns exact zeros elsewhere."""
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ShapeError("softmax mask leaves an empty row")
        shifted = np.where(mask, x, -np.inf)
        m = shifted.max(axis=axis, keepdims=True)
        e = np.exp(np.where(mask, x - m, -np.inf))
        e = np.where(mask, e, 0.0)
    else:
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accum(a, y * (g - dot))

    return _make(y, (a,), bw)


def logsumexp(a, axis=None, keepdims=False):
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    data = m + np.log(s)
    if not keepdims and axis is not None:
        data = np.squeeze(data, axis=axis)
    elif not keepdims:
        data = data.reshape(())
    soft = e / s

    def bw(g):
        if axis is None:
            _accum(a, soft * g)
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, soft * ge)

    return _make(data, (a,), bw)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize each row (last axis) to zero mean / unit variance, then
    apply the affine [gain, bias]."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    data = gain.data * xhat + bias.data

    def bw(g):
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.data.shape))
        if a.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(a, inv * (dxhat - m1 - xhat * m2))

    return _make(data, (a, gain, bias), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    x = a.data
    u = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(u)
    data = 0.5 * x * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        _accum(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du))

    return _make(data, (a,), bw)


def dropout(a, rate, rng):
    """Inverted dropout with an explicit RNG; call only in training mode."""
    if rate <= 0.0:
        return a
    keep = rng.random(a.data.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    factor = keep * scale

    def bw(g):
        _accum(a, g * factor)

    return _make(a.data * factor, (a,), bw)


def cross_entropy(logits, labels, weights=None):
    """Mean over the batch of weight[label] * (-log softmax(logits)[label]).

    logits: (B, C); labels: length-B ints in [0, C); weights: length-C
    positive floats (defaults to ones).
    """
    x = logits.data
    if x.ndim != 2:
        raise ShapeError(f"cross_entropy expects (B, C) logits, got {x.shape}")
    b, c = x.shape
    y = np.asarray(labels, dtype=np.intp)
    if y.min() < 0 or y.max() >= c:
        raise IndexError(f"label out of range [0, {c})")
    w = np.ones(c) if weights is None else np.asarray(weights, dtype=np.float64)
    m = x.max(axis=1, keepdims=True)
    logz = m + np.log(np.exp(x - m).sum(axis=1, keepdims=True))
    logp = x - logz
    wv = w[y]
    data = float((wv * -logp[np.arange(b), y]).mean())

    def bw(g):
        p = np.exp(logp)
        d = p * wv[:, None]
        d[np.arange(b), y] -= wv
        _accum(logits, (float(g) / b) * d)

    return _make(np.float64(data), (logits,), bw)
