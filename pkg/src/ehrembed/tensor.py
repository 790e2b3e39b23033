"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus an optional gradient buffer. Ops build
an implicit tape: each result remembers its parent tensors and a closure
that routes the output gradient back to them. ``backward(loss)`` walks
the tape in reverse topological order, accumulates ``.grad`` on every
participating tensor, then clears the tape.

Design constraints kept deliberately tight:
  - float32 by default, float64 for verification (``dtype=`` everywhere);
  - no broadcasting except the bias form of ``add`` (matrix + vector);
    scalar operands are materialised to full-shape constants;
  - a tape is single-threaded; distinct tapes may run concurrently.
"""

from contextlib import contextmanager

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars become full-shape constants (no broadcasting)
    def __add__(self, other):
        return add(self, _coerce(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _coerce(-1.0, self))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tensor_slice(self, key)

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)

    def mean(self, axis=None):
        return mean(self, axis=axis)

    def backward(self):
        backward(self)


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, value, dtype=like.dtype))


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _check_same_dtype(op, a, b):
    if a.dtype != b.dtype:
        raise DimensionError(f"{op}: dtypes {a.dtype} and {b.dtype} differ")


# ---------------------------------------------------------------- basic ops

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; also accepts a trailing-axis bias vector for b."""
    _check_same_dtype("add", a, b)
    bias = b.data.ndim == 1 and a.data.ndim > 1 and a.shape[-1] == b.shape[0]
    if not bias:
        _check_same_shape("add", a, b)
    data = a.data + b.data

    def back(g):
        if a.requires_grad or a._parents:
            a._accumulate(g)
        if b.requires_grad or b._parents:
            if bias:
                b._accumulate(g.reshape(-1, b.shape[0]).sum(axis=0))
            else:
                b._accumulate(g)

    return _result(data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("sub", a, b)
    _check_same_shape("sub", a, b)

    def back(g):
        if a.requires_grad or a._parents:
            a._accumulate(g)
        if b.requires_grad or b._parents:
            b._accumulate(-g)

    return _result(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("mul", a, b)
    _check_same_shape("mul", a, b)

    def back(g):
        if a.requires_grad or a._parents:
            a._accumulate(g * b.data)
        if b.requires_grad or b._parents:
            b._accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; stacked (batched) operands multiply pairwise.

    Leading batch dimensions must match exactly.
    """
    _check_same_dtype("matmul", a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul: operands must be >=2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} incompatible")
    data = np.matmul(a.data, b.data)

    def back(g):
        if a.requires_grad or a._parents:
            a._accumulate(np.matmul(g, b.data.swapaxes(-1, -2)))
        if b.requires_grad or b._parents:
            b._accumulate(np.matmul(a.data.swapaxes(-1, -2), g))

    return _result(data, (a, b), back)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat: empty input")
    for t in tensors[1:]:
        _check_same_dtype("concat", tensors[0], t)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def back(g):
        start = 0
        for t, size in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + size)
            if t.requires_grad or t._parents:
                t._accumulate(g[tuple(idx)])
            start += size

    return _result(data, tuple(tensors), back)


def tensor_slice(a: Tensor, key) -> Tensor:
    data = a.data[key]
    if not isinstance(data, np.ndarray):
        data = np.asarray(data, dtype=a.dtype)

    def back(g):
        if a.requires_grad or a._parents:
            full = np.zeros_like(a.data)
            full[key] = g
            a._accumulate(full)

    return _result(data.copy(), (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def back(g):
        if a.requires_grad or a._parents:
            a._accumulate(g.reshape(a.shape))

    return _result(data.copy(), (a,), back)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = np.transpose(a.data, axes)

    def back(g):
        if a.requires_grad or a._parents:
            a._accumulate(np.transpose(g, inverse))

    return _result(data.copy(), (a,), back)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-d table; gradient scatter-adds into the rows."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-d, got {table.shape}")
    data = table.data[ids]

    def back(g):
        if table.requires_grad or table._parents:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
            table._accumulate(gt)

    return _result(data, (table,), back)


# ------------------------------------------------------------- activations

def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def back(g):
        if a.requires_grad or a._parents:
            a._accumulate(g * (1.0 - data * data))

    return _result(data, (a,), back)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid(a.data)

    def back(g):
        if a.requires_grad or a._parents:
            a._accumulate(g * data * (1.0 - data))

    return _result(data, (a,), back)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def back(g):
        if a.requires_grad or a._parents:
            a._accumulate(g * (a.data > 0))

    return _result(data, (a,), back)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        if a.requires_grad or a._parents:
            dot = (g * data).sum(axis=axis, keepdims=True)
            a._accumulate(data * (g - dot))

    return _result(data, (a,), back)


def dropout(a: Tensor, p: float, train_flag: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when not training."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout: p must be in [0, 1), got {p}")
    if not train_flag or p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / np.asarray(1.0 - p, dtype=a.dtype)

    def back(g):
        if a.requires_grad or a._parents:
            a._accumulate(g * keep)

    return _result(a.data * keep, (a,), back)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the trailing axis, then scale and shift."""
    if gain.shape != (a.shape[-1],) or bias.shape != (a.shape[-1],):
        raise DimensionError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} must match trailing axis of {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    data = xhat * gain.data + bias.data

    def back(g):
        if gain.requires_grad or gain._parents:
            gain._accumulate((g * xhat).reshape(-1, a.shape[-1]).sum(axis=0))
        if bias.requires_grad or bias._parents:
            bias._accumulate(g.reshape(-1, a.shape[-1]).sum(axis=0))
        if a.requires_grad or a._parents:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (gx - m1 - xhat * m2))

    return _result(data, (a, gain, bias), back)


# ---------------------------------------------------------------- reductions

def tensor_sum(a: Tensor, axis=None) -> Tensor:
    data = np.asarray(a.data.sum(axis=axis), dtype=a.dtype)

    def back(g):
        if a.requires_grad or a._parents:
            if axis is None:
                a._accumulate(np.full_like(a.data, g))
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _result(data, (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    data = np.asarray(a.data.mean(axis=axis), dtype=a.dtype)
    count = a.data.size if axis is None else a.shape[axis]

    def back(g):
        if a.requires_grad or a._parents:
            if axis is None:
                a._accumulate(np.full_like(a.data, g / count))
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g / count, axis), a.shape).copy())

    return _result(data, (a,), back)


# -------------------------------------------------------------------- losses

def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy on raw logits (numerically stable)."""
    _check_same_shape("bce_with_logits", logits, targets)
    x, y = logits.data, targets.data
    losses = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    data = np.asarray(losses.mean(), dtype=logits.dtype)
    n = x.size

    def back(g):
        if logits.requires_grad or logits._parents:
            logits._accumulate(g * (_sigmoid(x) - y) / n)

    return _result(data, (logits,), back)


def multilabel_bce(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean of independent per-label binary cross-entropies."""
    return bce_with_logits(logits, targets)


def softmax_cross_entropy(logits: Tensor, target_ids) -> Tensor:
    """Mean cross-entropy between row softmaxes and integer class ids."""
    ids = np.asarray(target_ids, dtype=np.int64)
    if logits.data.ndim != 2 or ids.shape != (logits.shape[0],):
        raise DimensionError(
            f"softmax_cross_entropy: logits {logits.shape} vs target ids {ids.shape}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(ids.shape[0])
    data = np.asarray((logsumexp - shifted[rows, ids]).mean(), dtype=logits.dtype)
    n = ids.shape[0]

    def back(g):
        if logits.requires_grad or logits._parents:
            probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
            probs[rows, ids] -= 1.0
            logits._accumulate(g * probs / n)

    return _result(data, (logits,), back)


# ------------------------------------------------------------------ backward

def backward(loss: Tensor):
    """Populate ``.grad`` along the tape that produced ``loss``, then clear it.

    Gradients are accumulated on every tensor that participated, leaves and
    intermediates alike; callers may read intermediate gradients afterwards.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")

    # iterative topological sort (recursion-free for long RNN chains)
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)
    for node in order:
        node._parents = ()
        node._backward = None
