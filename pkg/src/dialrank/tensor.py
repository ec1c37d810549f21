"""Dense tensors with reverse-mode automatic differentiation.

numpy-backed and deliberately small: every operation computes its value
eagerly and records backward closures on the result node, so the recorded
graph doubles as the tape. ``Tensor.backward`` replays it in reverse
execution order (a valid topological order, because inputs always exist
before the op that consumes them) and accumulates gradients additively --
a value consumed k times receives exactly k contributions.

Two numeric widths are supported: float64 for gradient checking and tests,
float32 for training runs. ``set_default_dtype`` switches the width used
for newly created tensors.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "set_default_dtype",
    "default_dtype",
    "using_dtype",
    "set_checked",
    "add",
    "sub",
    "mul",
    "matmul",
    "concat",
    "transpose",
    "reshape",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "softmax",
    "max_reduce",
    "sum_reduce",
    "embedding_lookup",
    "mask_fill",
    "sigmoid_cross_entropy",
    "zeros",
    "glorot_uniform",
]

_default_dtype = np.float64
_checked = False


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """A non-finite value appeared while checked mode is active."""


def set_default_dtype(dtype) -> None:
    """Select the numeric width for newly created tensors.

    float64 is the gradient-check/test width, float32 the training width.
    """
    global _default_dtype
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _default_dtype = dt.type


def default_dtype():
    return _default_dtype


class using_dtype:
    """Context manager that temporarily switches the default dtype."""

    def __init__(self, dtype):
        self._dtype = dtype
        self._saved = None

    def __enter__(self):
        global _default_dtype
        self._saved = _default_dtype
        set_default_dtype(self._dtype)
        return self

    def __exit__(self, *exc):
        global _default_dtype
        _default_dtype = self._saved
        return False


def set_checked(flag: bool) -> None:
    """Toggle non-finite detection on every op result (off by default)."""
    global _checked
    _checked = bool(flag)


class Tensor:
    """A dense array plus the bookkeeping needed for backpropagation.

    ``data`` is always a float32 or float64 ndarray. ``grad`` is filled in
    by :meth:`backward` for every reachable tensor with ``requires_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_order")
    _counter = itertools.count()

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._order = next(Tensor._counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        """Propagate gradients from this node to every reachable input.

        ``grad`` defaults to ones (i.e. d(sum of self)/d(inputs)). Each
        recorded operation is visited exactly once, after all of its
        consumers, by walking nodes in descending creation order.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match value shape {self.data.shape}")

        nodes = []
        seen = {id(self)}
        stack = [self]
        while stack:
            node = stack.pop()
            nodes.append(node)
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append(parent)

        self.grad = grad if self.grad is None else self.grad + grad
        for node in sorted(nodes, key=lambda n: n._order, reverse=True):
            if not node._parents or node.grad is None:
                continue
            for parent, fn in node._parents:
                g = fn(node.grad)
                parent.grad = g if parent.grad is None else parent.grad + g

    # Arithmetic sugar. Plain numbers and arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return narrow(self, key)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else _default_dtype))


def _result(data: np.ndarray, parents) -> Tensor:
    """Build an op result, keeping backward links only to grad-requiring inputs."""
    if _checked and not np.all(np.isfinite(data)):
        raise NonFiniteError("non-finite value in op result")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = tuple(pf for pf in parents if pf[0].requires_grad)
    out.requires_grad = bool(out._parents)
    out._order = next(Tensor._counter)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return _result(
        a.data + b.data,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(g, b.shape))],
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _result(
        a.data - b.data,
        [(a, lambda g: _unbroadcast(g, a.shape)), (b, lambda g: _unbroadcast(-g, b.shape))],
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _result(
        a.data * b.data,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.shape)),
        ],
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; batch dimensions broadcast over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions differ, {a.shape} @ {b.shape}") from None

    def grad_a(g):
        return _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)

    def grad_b(g):
        return _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)

    return _result(a.data @ b.data, [(a, grad_a), (b, grad_b)])


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        if t.ndim != ndim:
            raise ShapeError(f"concat: rank mismatch {tensors[0].shape} vs {t.shape}")
        for d in range(ndim):
            if d != axis % ndim and t.shape[d] != ref[d]:
                raise ShapeError(f"concat: shape mismatch {tensors[0].shape} vs {t.shape} on axis {d}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    parents = []
    offset = 0
    for t in tensors:
        size = t.shape[axis % ndim]
        key = [slice(None)] * ndim
        key[axis % ndim] = slice(offset, offset + size)
        parents.append((t, lambda g, k=tuple(key): g[k]))
        offset += size
    return _result(data, parents)


def narrow(x: Tensor, key) -> Tensor:
    """Basic slicing/integer indexing. Array indices must use embedding_lookup."""
    for k in key if isinstance(key, tuple) else (key,):
        if isinstance(k, (np.ndarray, list)):
            raise TypeError("array indexing is not differentiable here; use embedding_lookup")

    def grad_fn(g):
        out = np.zeros_like(x.data)
        out[key] = g
        return out

    return _result(x.data[key], [(x, grad_fn)])


def transpose(x: Tensor, axes=None) -> Tensor:
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(x.data, axes), [(x, lambda g: np.transpose(g, inverse))])


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    return _result(np.reshape(x.data, shape), [(x, lambda g: np.reshape(g, x.shape))])


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, [(x, lambda g: g * (1.0 - y * y))])


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _result(y, [(x, lambda g: g * y * (1.0 - y))])


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0).astype(x.dtype), [(x, lambda g: g * mask)])


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return _result(y, [(x, lambda g: g * y)])


def softmax(x: Tensor, axis: int) -> Tensor:
    """Numerically stable softmax along `axis` (max-subtracted)."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (g - (g * y).sum(axis=axis, keepdims=True)) * y

    return _result(y, [(x, grad_fn)])


def max_reduce(x: Tensor, axis: int):
    """Max along `axis`; returns (values, argmax indices).

    The backward pass routes gradient only to the argmax positions, taking
    the first index on ties.
    """
    x = _as_tensor(x)
    idx = np.argmax(x.data, axis=axis)
    values = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def grad_fn(g):
        out = np.zeros_like(x.data)
        np.put_along_axis(out, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return out

    return _result(values, [(x, grad_fn)]), idx


def sum_reduce(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)

    def grad_fn(g):
        if axis is None:
            return np.full_like(x.data, g)
        gx = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gx, x.shape).copy()

    return _result(x.data.sum(axis=axis, keepdims=keepdims), [(x, grad_fn)])


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of `table` (shape [n, d]) at integer `ids` (any shape)."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError(f"ids must be integers, got {ids.dtype}")
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"id out of range for table with {table.shape[0]} rows")

    def grad_fn(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return out

    return _result(table.data[ids], [(table, grad_fn)])


def mask_fill(x: Tensor, mask, value: float) -> Tensor:
    """Replace entries where `mask` is true with `value`; no gradient flows there."""
    x = _as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    try:
        if np.broadcast_shapes(mask.shape, x.shape) != x.shape:
            raise ValueError
    except ValueError:
        raise ShapeError(f"mask_fill: mask {mask.shape} not broadcastable to {x.shape}") from None
    data = np.where(mask, np.asarray(value, dtype=x.dtype), x.data)
    return _result(data, [(x, lambda g: np.where(mask, 0.0, g).astype(x.dtype))])


def sigmoid_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Elementwise binary cross-entropy on logits.

    Computed as max(z, 0) - z*y + log(1 + exp(-|z|)), which is finite for
    any finite logit. Labels are treated as constants.
    """
    logits = _as_tensor(logits)
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ShapeError(f"labels shape {y.shape} does not match logits shape {logits.shape}")
    z = logits.data
    data = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))

    def grad_fn(g):
        return g * (0.5 * (np.tanh(0.5 * z) + 1.0) - y)

    return _result(data, [(logits, grad_fn)])


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_default_dtype), requires_grad=requires_grad)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, requires_grad: bool = True) -> Tensor:
    """Uniform(-r, r) init with r = sqrt(6 / (fan_in + fan_out))."""
    r = math.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-r, r, size=shape if shape is not None else (fan_in, fan_out))
    return Tensor(data, requires_grad=requires_grad)
