"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its inputs and a backward closure on the produced
tensor; ``Tensor.backward()`` walks the recorded graph in reverse
topological order. The traversal order is fixed, so gradient accumulation
is bit-reproducible across runs.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        if _grad_enabled:
            self._parents = tuple(_parents)
            self._backward = _backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def check_finite(self, what="tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"{what} contains non-finite values")
        return self

    def backward(self):
        if self.data.size != 1:
            raise ContractError(
                f"backward() requires a scalar output, got shape {self.data.shape}"
            )
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # Convenience arithmetic; the named functions below do the real work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _topo_order(root):
    """Iterative post-order DFS; recursion would blow the stack on long chains."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _register(out, backward):
    # Backward closures are only attached while recording; under no_grad the
    # produced tensor stays a detached leaf.
    if _grad_enabled:
        out._backward = backward


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    _register(out, backward)
    return out


def sub(a, b):
    return add(a, scale(as_tensor(b), -1.0))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    _register(out, backward)
    return out


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c, (a,))

    def backward(g):
        _accum(a, g * c)

    _register(out, backward)
    return out


def add_scalar(a, c):
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data + c, (a,))

    def backward(g):
        _accum(a, g)

    _register(out, backward)
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul shapes do not conform: {a.data.shape} x {b.data.shape}"
        )
    out = Tensor(a.data @ b.data, (a, b))

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    _register(out, backward)
    return out


def transpose(a):
    a = as_tensor(a)
    out = Tensor(a.data.T, (a,))

    def backward(g):
        _accum(a, g.T)

    _register(out, backward)
    return out


def power(a, p):
    """Elementwise a**p for real p; caller guarantees a positive base when needed."""
    a = as_tensor(a)
    p = float(p)
    out = Tensor(a.data**p, (a,))

    def backward(g):
        _accum(a, g * p * a.data ** (p - 1.0))

    _register(out, backward)
    return out


def sum_all(a):
    a = as_tensor(a)
    out = Tensor(a.data.sum(), (a,))

    def backward(g):
        _accum(a, np.full_like(a.data, float(g)))

    _register(out, backward)
    return out


def sum_rows(a):
    """Row sums with keepdims: (m, n) -> (m, 1)."""
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=1, keepdims=True), (a,))

    def backward(g):
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    _register(out, backward)
    return out


def relu(a):
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), (a,))

    def backward(g):
        _accum(a, g * (a.data > 0.0))

    _register(out, backward)
    return out


def silu(a):
    a = as_tensor(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(a.data * sig, (a,))

    def backward(g):
        _accum(a, g * (sig + a.data * sig * (1.0 - sig)))

    _register(out, backward)
    return out


def softmax_rows(x):
    """Row-wise softmax with per-row max subtraction for stability."""
    x = as_tensor(x)
    x.check_finite("softmax input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, (x,))

    def backward(g):
        _accum(x, (g - (g * y).sum(axis=-1, keepdims=True)) * y)

    _register(out, backward)
    return out


def log_softmax_rows(x):
    x = as_tensor(x)
    x.check_finite("log_softmax input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = Tensor(y, (x,))

    def backward(g):
        _accum(x, g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    _register(out, backward)
    return out


def logaddexp(a, b):
    """Elementwise log(exp(a) + exp(b)); tolerates -inf operands."""
    a, b = as_tensor(a), as_tensor(b)
    y = np.logaddexp(a.data, b.data)
    out = Tensor(y, (a, b))

    def backward(g):
        # Where y == -inf both inputs were -inf; their weight is zero.
        with np.errstate(invalid="ignore"):
            wa = np.where(np.isneginf(y), 0.0, np.exp(a.data - y))
            wb = np.where(np.isneginf(y), 0.0, np.exp(b.data - y))
        _accum(a, _unbroadcast(g * wa, a.data.shape))
        _accum(b, _unbroadcast(g * wb, b.data.shape))

    _register(out, backward)
    return out


def concat_rows(parts):
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=0), tuple(parts))
    sizes = [p.data.shape[0] for p in parts]

    def backward(g):
        offset = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[offset : offset + n])
            offset += n

    _register(out, backward)
    return out


def concat_cols(parts):
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), tuple(parts))
    sizes = [p.data.shape[1] for p in parts]

    def backward(g):
        offset = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[:, offset : offset + n])
            offset += n

    _register(out, backward)
    return out


def slice_rows(a, start, stop):
    a = as_tensor(a)
    out = Tensor(a.data[start:stop], (a,))

    def backward(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accum(a, full)

    _register(out, backward)
    return out


def slice_cols(a, start, stop):
    a = as_tensor(a)
    out = Tensor(a.data[:, start:stop], (a,))

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    _register(out, backward)
    return out


def gather_rows(table, ids):
    """Row lookup table[ids]; backward scatter-adds (duplicate ids accumulate)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[ids], (table,))

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accum(table, full)

    _register(out, backward)
    return out


def take_entries(a, rows, cols):
    """Pick a[rows[i], cols[i]] into a 1-D tensor."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = Tensor(a.data[rows, cols], (a,))

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, cols), g)
        _accum(a, full)

    _register(out, backward)
    return out


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), (a,))

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    _register(out, backward)
    return out


def mean_pool_rows(a, factor):
    """Strided mean pooling over rows; output length ceil(m / factor)."""
    a = as_tensor(a)
    m = a.data.shape[0]
    n_out = -(-m // factor)
    pooled = np.empty((n_out,) + a.data.shape[1:], dtype=np.float64)
    counts = np.empty(n_out, dtype=np.int64)
    for i in range(n_out):
        lo, hi = i * factor, min((i + 1) * factor, m)
        pooled[i] = a.data[lo:hi].mean(axis=0)
        counts[i] = hi - lo
    out = Tensor(pooled, (a,))

    def backward(g):
        full = np.zeros_like(a.data)
        for i in range(n_out):
            lo, hi = i * factor, min((i + 1) * factor, m)
            full[lo:hi] = g[i] / counts[i]
        _accum(a, full)

    _register(out, backward)
    return out


def grad_check(f, x, eps=1e-5):
    """Compare analytic gradients of scalar ``f`` at ``x`` against central differences.

    Returns the max over coordinates of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractError(f"eps {eps} outside [1e-7, 1e-3]")
    x = as_tensor(x)
    base = Tensor(x.data.copy())
    out = f(base)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = base.grad if base.grad is not None else np.zeros_like(base.data)

    numeric = np.zeros_like(base.data)
    flat = numeric.reshape(-1)
    with no_grad():
        for i in range(base.data.size):
            plus = base.data.copy().reshape(-1)
            plus[i] += eps
            minus = base.data.copy().reshape(-1)
            minus[i] -= eps
            fp = f(Tensor(plus.reshape(base.data.shape))).item()
            fm = f(Tensor(minus.reshape(base.data.shape))).item()
            flat[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if base.data.size else 0.0


def zeros(shape):
    return Tensor(np.zeros(shape, dtype=np.float64))


def full(shape, value):
    return Tensor(np.full(shape, float(value), dtype=np.float64))
