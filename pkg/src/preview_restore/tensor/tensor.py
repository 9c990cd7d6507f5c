"""Dense float tensors with reverse-mode differentiation, backed by numpy.

Every primitive computes its value eagerly and, when any operand requires a
gradient, records a closure mapping the upstream gradient to one gradient per
operand. ``Tensor.backward`` walks the recorded graph in reverse topological
order and accumulates into the ``grad`` buffers of leaves only.
"""

import contextlib
import math
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from preview_restore.errors import NonFiniteError, ShapeError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


@contextlib.contextmanager
def precision(dtype):
    """Create new tensors in ``dtype`` (float32 or float64) inside the block."""
    global _DEFAULT_DTYPE
    previous = _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """N-dimensional float array with optional gradient tracking."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Value-only copy cut from the graph (the stop-gradient primitive)."""
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # -- graph ---------------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every ``requires_grad`` leaf."""
        if self.data.size != 1:
            raise ShapeError(f"backward: loss must be a scalar, got shape {self.shape}")
        if not self.requires_grad:
            return
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(_topological_order(self)):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.is_leaf:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(_lift(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("div: only division by a constant is supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _topological_order(root: Tensor) -> List[Tensor]:
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype), dtype=like.data.dtype)


def _result(data, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    data = np.asarray(data, dtype=parents[0].data.dtype)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op}: produced non-finite values (output shape {data.shape})")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    track = _GRAD_ENABLED and any(parent.requires_grad for parent in parents)
    out.requires_grad = track
    out._parents = tuple(parents) if track else ()
    out._backward = backward if track else None
    out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    _broadcast_check("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    if not isinstance(b, Tensor):
        scale = float(b)
        return _result(a.data * scale, (a,), lambda g: (g * scale,), "mul")
    _broadcast_check("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def silu(a: Tensor) -> Tensor:
    sig = expit(a.data)

    def backward(g):
        return (g * sig * (1.0 + a.data * (1.0 - sig)),)

    return _result(a.data * sig, (a,), backward, "silu")


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    inside = (a.data >= low) & (a.data <= high)
    return _result(np.clip(a.data, low, high), (a,), lambda g: (g * inside,), "clamp")


# -- reductions ----------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    value = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64)

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)),)

    return _result(value, (a,), backward, "sum")


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    value = np.mean(a.data, axis=axis, keepdims=keepdims, dtype=np.float64)
    count = a.data.size / max(np.asarray(value).size, 1)

    def backward(g):
        return (np.array(_expand_reduced(g, a.shape, axis, keepdims)) / count,)

    return _result(value, (a,), backward, "mean")


# -- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def backward(g):
        grad_a = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        grad_b = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return grad_a, grad_b

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis (no affine parameters)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    centred = a.data - mu
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    normed = centred * inv

    def backward(g):
        grad = inv * (g - g.mean(axis=-1, keepdims=True)
                      - normed * (g * normed).mean(axis=-1, keepdims=True))
        return (grad,)

    return _result(normed, (a,), backward, "layer_norm")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=axis, keepdims=True)

    def backward(g):
        return (probs * (g - (g * probs).sum(axis=axis, keepdims=True)),)

    return _result(probs, (a,), backward, "softmax")


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} do not conform")
    scores = matmul(q, transpose(k, _swap_last(k.ndim))) * (1.0 / math.sqrt(q.shape[-1]))
    return matmul(softmax(scores, axis=-1), v)


def _swap_last(ndim: int) -> Tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


# -- convolution ---------------------------------------------------------------

def _reflect_pad_backward(grad_padded: np.ndarray) -> np.ndarray:
    rows = grad_padded[:, :, 1:-1, :].copy()
    rows[:, :, 1, :] += grad_padded[:, :, 0, :]
    rows[:, :, -2, :] += grad_padded[:, :, -1, :]
    grad = rows[:, :, :, 1:-1].copy()
    grad[:, :, :, 1] += rows[:, :, :, 0]
    grad[:, :, :, -2] += rows[:, :, :, -1]
    return grad


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """3x3 convolution, stride 1 or 2, reflect padding of one pixel.

    x: (N, C, H, W); weight: (O, C, 3, 3); bias: (O,).
    """
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[2:] != (3, 3) or weight.shape[1] != x.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} and kernel {weight.shape} do not conform")
    if min(x.shape[2:]) < 2 or (stride == 2 and (x.shape[2] % 2 or x.shape[3] % 2)):
        raise ShapeError(f"conv2d: spatial extent {x.shape[2:]} unsupported for stride {stride}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match kernel {weight.shape}")

    n, _, h, w = x.shape
    out_h, out_w = h // stride, w // stride
    padded = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
    cols = sliding_window_view(padded, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        grad_w = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        grad_cols = np.tensordot(g, weight.data, axes=([1], [0]))  # (N, Ho, Wo, C, 3, 3)
        grad_padded = np.zeros_like(padded)
        for i in range(3):
            for j in range(3):
                grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += \
                    grad_cols[..., i, j].transpose(0, 3, 1, 2)
        grads = [_reflect_pad_backward(grad_padded), grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, "conv2d")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes by two."""
    if x.ndim != 4:
        raise ShapeError(f"upsample2x: expected (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _result(x.data.repeat(2, axis=2).repeat(2, axis=3), (x,), backward, "upsample2x")


# -- shape ---------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        value = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _result(value, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(value, tensors, backward, "concat")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        grad = np.zeros_like(a.data)
        grad[index] = g
        return (grad,)

    return _result(a.data[index], (a,), backward, "slice")


def split(a: Tensor, sections: Union[int, Sequence[int]], axis: int = 0) -> List[Tensor]:
    """Split like ``numpy.split``: an equal section count or explicit indices."""
    extent = a.shape[axis]
    if isinstance(sections, int):
        if sections <= 0 or extent % sections:
            raise ShapeError(f"split: axis {axis} of extent {extent} not divisible into {sections}")
        step = extent // sections
        bounds = [i * step for i in range(sections + 1)]
    else:
        bounds = [0, *sections, extent]
    return [slice_axis(a, axis, start, stop) for start, stop in zip(bounds[:-1], bounds[1:])]


def take(table: Tensor, ids) -> Tensor:
    """Row gather ``table[ids]`` (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"take: ids out of range for table with {table.shape[0]} rows")

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _result(table.data[ids], (table,), backward, "take")


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape), dtype=dtype)


def ones(shape, dtype=None) -> Tensor:
    return Tensor(np.ones(shape), dtype=dtype)
