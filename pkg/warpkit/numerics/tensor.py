from __future__ import annotations

import contextvars
import logging
import os
from typing import Any, Callable, Literal, Sequence

import numpy as np

from ..errors import ConfigError, ContractError, DomainError, NumericError, ShapeError

logger = logging.getLogger(__name__)

Precision = Literal["f32", "f64"]

PRECISION_ENV = "WARPKIT_PRECISION"

_DTYPES: dict[str, type[np.floating]] = {"f32": np.float32, "f64": np.float64}

GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def default_precision() -> Precision:
    """Precision named by ``WARPKIT_PRECISION``, ``f32`` when unset."""
    value = os.getenv(PRECISION_ENV, "f32").strip().lower()
    if value not in _DTYPES:
        raise ConfigError(
            f"Invalid {PRECISION_ENV}={value!r}.\n"
            f"Expected one of: {', '.join(_DTYPES)}."
        )
    return value  # type: ignore[return-value]


def resolve_dtype(precision: str | None = None) -> np.dtype:
    precision = precision or default_precision()
    try:
        return np.dtype(_DTYPES[precision])
    except KeyError:
        raise ConfigError(f"Unknown precision {precision!r}; expected one of: {', '.join(_DTYPES)}.") from None


def precision_of(dtype: np.dtype) -> Precision:
    for name, kind in _DTYPES.items():
        if np.dtype(kind) == np.dtype(dtype):
            return name  # type: ignore[return-value]
    raise ConfigError(f"Unsupported dtype {dtype}; warpkit tensors are float32 or float64.")


_active_tape: contextvars.ContextVar[GradTape | None] = contextvars.ContextVar("warpkit_grad_tape", default=None)


class Tensor:
    """Immutable dense array that can take part in reverse-mode differentiation.

    Data is always float32 or float64 and always finite. A tensor records the
    operation that produced it only while a :class:`GradTape` is active and at
    least one input requires gradients.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_grad_fn", "_op")
    __array_priority__ = 1000

    def __init__(self, data: Any, *, requires_grad: bool = False, dtype: np.dtype | str | None = None) -> None:
        if isinstance(data, Tensor):
            data = data.data
        array = np.array(data, dtype=dtype, copy=True)
        if dtype is None and array.dtype not in (np.float32, np.float64):
            array = array.astype(resolve_dtype())
        precision_of(array.dtype)
        _check_finite(array, "tensor construction")
        array.flags.writeable = False
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: GradFn | None = None
        self._op = "leaf"

    @classmethod
    def leaf(cls, data: Any, *, dtype: np.dtype | str | None = None) -> Tensor:
        """A trainable value: gradients are reported for it by :func:`backward`."""
        return cls(data, requires_grad=True, dtype=dtype)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._grad_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return _wrap(self.data)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad}, op={self._op})"

    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return mul(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Any) -> Tensor:
        return matmul(self, other)

    def __truediv__(self, other: float) -> Tensor:
        if isinstance(other, Tensor):
            raise ShapeError("Tensor division is only supported by a Python scalar.")
        return scale(self, 1.0 / float(other))

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int | tuple[int, ...]) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, tuple(shape))  # type: ignore[arg-type]

    def transpose(self, *axes: int) -> Tensor:
        return transpose(self, axes or None)


class GradTape:
    """Records the differentiable operations issued while it is active.

    Use as a context manager; :func:`backward` consumes the tape once, after
    which it is frozen.
    """

    def __init__(self) -> None:
        self._nodes: list[Tensor] = []
        self._leaves: dict[int, Tensor] = {}
        self._frozen = False
        self._token: contextvars.Token[GradTape | None] | None = None

    def __enter__(self) -> GradTape:
        if self._frozen:
            raise ContractError("This tape was already consumed by backward(); record a new one.")
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc_info: Any) -> None:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None

    @property
    def frozen(self) -> bool:
        return self._frozen

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, *tensors: Tensor) -> None:
        """Mark leaves whose gradients must be reported even if unused."""
        for tensor in tensors:
            if not tensor.requires_grad or not tensor.is_leaf:
                raise ContractError(f"Only trainable leaves can be watched, got {tensor!r}")
            self._leaves[id(tensor)] = tensor

    def _record(self, node: Tensor) -> None:
        if self._frozen:
            raise ContractError("Cannot record on a frozen tape.")
        self._nodes.append(node)
        for parent in node._parents:
            if parent.requires_grad and parent.is_leaf:
                self._leaves.setdefault(id(parent), parent)


def backward(tape: GradTape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse pass over ``tape`` from the scalar ``loss``.

    Returns a gradient for every leaf seen by the tape; intermediate
    gradients are discarded. The tape is frozen afterwards.
    """
    if tape.frozen:
        raise ContractError("This tape was already consumed by backward(); record a new one.")
    if loss.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.is_leaf and id(loss) not in tape._leaves:
        raise ContractError("The loss was not recorded on this tape.")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape._nodes):
        upstream = grads.pop(id(node), None)
        if upstream is None:
            continue
        assert node._grad_fn is not None
        for parent, grad in zip(node._parents, node._grad_fn(upstream)):
            if grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grad if key not in grads else grads[key] + grad

    tape._frozen = True
    result: dict[Tensor, np.ndarray] = {}
    for key, leaf in tape._leaves.items():
        grad = grads.get(key)
        if grad is None:
            grad = np.zeros_like(leaf.data)
        result[leaf] = np.asarray(grad, dtype=leaf.dtype).reshape(leaf.shape)
    tape._nodes.clear()
    return result


def _check_finite(array: np.ndarray, op: str) -> None:
    if not np.isfinite(array).all():
        raise NumericError(f"Non-finite values produced by {op}.")


def _wrap(data: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    if data.flags.writeable:
        data.flags.writeable = False
    out.data = data
    out.requires_grad = False
    out._parents = ()
    out._grad_fn = None
    out._op = "const"
    return out


def _result(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn: GradFn, op: str) -> Tensor:
    data = np.asarray(data)
    _check_finite(data, op)
    out = _wrap(data)
    out._op = op
    tape = _active_tape.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
        tape._record(out)
    return out


def as_tensor(value: Any, *, like: Tensor | None = None, dtype: np.dtype | str | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    if dtype is None and like is not None:
        dtype = like.dtype
    if dtype is None and isinstance(value, np.ndarray) and value.dtype in (np.float32, np.float64):
        dtype = value.dtype
    return Tensor(value, dtype=dtype)


def zeros(shape: Sequence[int], dtype: np.dtype | str | None = None) -> Tensor:
    return _wrap(np.zeros(tuple(shape), dtype=resolve_dtype() if dtype is None else dtype))


def ones(shape: Sequence[int], dtype: np.dtype | str | None = None) -> Tensor:
    return _wrap(np.ones(tuple(shape), dtype=resolve_dtype() if dtype is None else dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


def add(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), grad_fn, "add")


def sub(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), grad_fn, "mul")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _result(a.data * factor, (a,), lambda g: (g * factor,), "scale")


def matmul(a: Any, b: Any) -> Tensor:
    """Matrix product over the last two axes, batching over leading ones."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape} @ {b.shape}.\n"
            f"The last axis of the left operand ({a.shape[-1]}) must equal "
            f"the second-to-last axis of the right operand ({b.shape[-2]})."
        )

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), grad_fn, "matmul")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(perm))
    return _result(np.transpose(a.data, perm), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError as ex:
        raise ShapeError(f"Cannot reshape {original} into {tuple(shape)}: {ex}") from None
    return _result(data, (a,), lambda g: (g.reshape(original),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    tensors = tuple(as_tensor(t, like=tensors[0]) for t in tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as ex:
        raise ShapeError(f"concat shapes incompatible: {[t.shape for t in tensors]}: {ex}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grad_fn(g: np.ndarray) -> list[np.ndarray]:
        return np.split(g, bounds, axis=axis)

    return _result(data, tensors, grad_fn, "concat")


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice ``[start, stop)`` along ``axis``."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    key = tuple(index)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros_like(a.data)
        out[key] = g
        return (out,)

    return _result(a.data[key], (a,), grad_fn, "narrow")


def take(a: Tensor, indices: np.ndarray | Sequence[int], axis: int = 0) -> Tensor:
    """Gather entries of ``a`` along ``axis``; repeated indices accumulate gradient."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 1:
        raise ShapeError(f"take expects a 1-D index array, got shape {indices.shape}")
    size = a.shape[axis]
    if indices.size and (indices.min() < 0 or indices.max() >= size):
        raise DomainError(f"take index out of range for axis of size {size}")
    axis = axis % a.ndim
    key = (slice(None),) * axis + (indices,)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return _result(np.take(a.data, indices, axis=axis), (a,), grad_fn, "take")


def where(condition: np.ndarray, a: Any, b: Any) -> Tensor:
    condition = np.asarray(condition, dtype=bool)
    a, b = _pair(a, b)
    zero = np.zeros((), dtype=np.result_type(a.dtype, b.dtype))

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(np.where(condition, g, zero), a.shape),
            _unbroadcast(np.where(condition, zero, g), b.shape),
        )

    return _result(np.where(condition, a.data, b.data), (a, b), grad_fn, "where")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1 - y * y),), "tanh")


def sum_(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), grad_fn, "sum")


def mean(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    total = sum_(a, axis=axis, keepdims=keepdims)
    count = a.size // max(total.size, 1) if axis is not None else a.size
    return scale(total, 1.0 / count)


def softmax(x: Tensor, axis: int = -1, where: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax; entries outside ``where`` get zero weight."""
    if x.ndim == 0:
        raise DomainError("softmax needs at least one axis")
    if not -x.ndim <= axis < x.ndim:
        raise DomainError(f"softmax axis {axis} invalid for shape {x.shape}")
    axis = axis % x.ndim
    logits = x.data
    if where is not None:
        where = np.broadcast_to(np.asarray(where, dtype=bool), logits.shape)
        if not where.any(axis=axis).all():
            raise DomainError("softmax mask leaves an empty slice")
        logits = np.where(where, logits, -np.inf)
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)

    return _result(y, (x,), grad_fn, "softmax")


def rms_norm(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Scale each vector along the last axis to unit root-mean-square."""
    data = x.data
    r = 1.0 / np.sqrt(np.mean(data * data, axis=-1, keepdims=True) + eps)

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        return (r * g - data * (r**3) * np.mean(g * data, axis=-1, keepdims=True),)

    return _result(data * r, (x,), grad_fn, "rms_norm")


def rotate_pairs(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate interleaved (even, odd) pairs of the last axis by the given angles."""
    if x.shape[-1] % 2:
        raise ShapeError(f"rotate_pairs needs an even last axis, got {x.shape}")
    cos = np.asarray(cos, dtype=x.dtype)
    sin = np.asarray(sin, dtype=x.dtype)
    even, odd = x.data[..., 0::2], x.data[..., 1::2]
    y = np.empty_like(x.data)
    y[..., 0::2] = even * cos - odd * sin
    y[..., 1::2] = even * sin + odd * cos

    def grad_fn(g: np.ndarray) -> tuple[np.ndarray]:
        ge, go = g[..., 0::2], g[..., 1::2]
        out = np.empty_like(g)
        out[..., 0::2] = ge * cos + go * sin
        out[..., 1::2] = go * cos - ge * sin
        return (out,)

    return _result(y, (x,), grad_fn, "rotate_pairs")


def mse(prediction: Tensor, target: Any) -> Tensor:
    diff = sub(prediction, target)
    return mean(mul(diff, diff))


def argmax(x: Tensor | np.ndarray, axis: int = -1) -> np.ndarray:
    """Index of the maximum along ``axis``; ties resolve to the smallest index."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    if data.ndim == 0:
        raise DomainError("argmax needs at least one axis")
    if not -data.ndim <= axis < data.ndim:
        raise DomainError(f"argmax axis {axis} invalid for shape {data.shape}")
    if data.shape[axis] == 0:
        raise DomainError("argmax over an empty axis is undefined")
    return np.argmax(data, axis=axis)
