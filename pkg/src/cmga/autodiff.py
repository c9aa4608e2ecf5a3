"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are ``Function`` subclasses with a static ``forward`` on raw arrays
and a static ``backward`` mapping the output gradient to input gradients.
Recording happens only inside an active :class:`Tape`::

    with Tape() as tape:
        loss = mean_all(hadamard(x, x))
    backward(tape, loss)
    x.grad

Every op accepts optional leading batch axes; a 2-D weight on the right of
``matmul`` is shared across them.
"""

from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "BackwardError",
    "Tensor",
    "Tape",
    "Function",
    "as_tensor",
    "matmul",
    "transpose",
    "add",
    "hadamard",
    "scale",
    "concat",
    "concat_features",
    "sigmoid",
    "relu",
    "softmax_rows",
    "mean_rows",
    "mean_all",
    "reshape",
    "backward",
    "finite_diff_gradient",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class BackwardError(RuntimeError):
    """Raised when a backward pass is requested on an unusable loss."""


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "cmga_active_tape", default=None
)


class Tensor:
    """A dense float64 array that may take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if any(extent < 1 for extent in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return hadamard(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of the differentiable operations of one forward pass.

    Records are appended as ops execute, so the list is topologically sorted
    by construction. A tape is single-use and must not be shared between
    threads while recording.
    """

    def __init__(self):
        self.records: list[tuple[type[Function], tuple[Tensor, ...], Tensor, object]] = []
        self._token = None

    def __enter__(self) -> "Tape":
        if self._token is not None:
            raise RuntimeError("tape is already active")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def produced(self, t: Tensor) -> bool:
        i = t.node_id
        return i is not None and i < len(self.records) and self.records[i][2] is t

    def record(self, fn: type["Function"], inputs: tuple[Tensor, ...], out: Tensor, ctx) -> None:
        out.node_id = len(self.records)
        self.records.append((fn, inputs, out, ctx))


class Function:
    """Base class for differentiable ops.

    ``forward(*arrays, **kwargs)`` returns ``(out_array, ctx)``; ``ctx`` is
    whatever ``backward(ctx, grad, *arrays)`` needs. ``backward`` returns one
    gradient (or ``None``) per input.
    """

    @staticmethod
    def forward(*arrays, **kwargs):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad, *arrays):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        out_data, ctx = cls.forward(*(t.data for t in inputs), **kwargs)
        tape = _ACTIVE_TAPE.get()
        needs = any(t.requires_grad for t in inputs)
        out = Tensor.__new__(Tensor)
        out.data = out_data
        out.requires_grad = needs and tape is not None
        out.grad = None
        out.node_id = None
        out.name = None
        if out.requires_grad:
            tape.record(cls, inputs, out, ctx)
        return out


def _swap_last(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


class MatMul(Function):
    @staticmethod
    def forward(a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul batch mismatch: {a.shape} @ {b.shape}")
        if a.ndim < b.ndim:
            raise ShapeError(f"matmul batch mismatch: {a.shape} @ {b.shape}")
        return a @ b, None

    @staticmethod
    def backward(ctx, grad, a, b):
        ga = grad @ _swap_last(b)
        gb = _swap_last(a) @ grad
        if b.ndim == 2 and gb.ndim > 2:
            gb = gb.reshape(-1, *b.shape).sum(axis=0)
        return ga, gb


class Transpose(Function):
    @staticmethod
    def forward(a):
        if a.ndim < 2:
            raise ShapeError(f"transpose needs at least 2 axes, got {a.shape}")
        return _swap_last(a), None

    @staticmethod
    def backward(ctx, grad, a):
        return (_swap_last(grad),)


class Add(Function):
    @staticmethod
    def forward(a, b):
        if a.shape == b.shape:
            return a + b, False
        # bias row: (1, n) against (..., L, n)
        if b.ndim == 2 and b.shape[0] == 1 and a.ndim >= 2 and a.shape[-1] == b.shape[1]:
            return a + b, True
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")

    @staticmethod
    def backward(broadcast, grad, a, b):
        if broadcast:
            return grad, grad.reshape(-1, b.shape[1]).sum(axis=0, keepdims=True)
        return grad, grad


class Hadamard(Function):
    @staticmethod
    def forward(a, b):
        if a.shape != b.shape:
            raise ShapeError(f"hadamard shape mismatch: {a.shape} * {b.shape}")
        return a * b, None

    @staticmethod
    def backward(ctx, grad, a, b):
        return grad * b, grad * a


class Scale(Function):
    @staticmethod
    def forward(a, factor):
        return a * factor, factor

    @staticmethod
    def backward(factor, grad, a):
        return (grad * factor,)


class Concat(Function):
    @staticmethod
    def forward(*arrays, axis):
        first = arrays[0]
        ax = axis % first.ndim
        for other in arrays[1:]:
            if other.ndim != first.ndim or any(
                other.shape[d] != first.shape[d] for d in range(first.ndim) if d != ax
            ):
                raise ShapeError(
                    f"concat extent mismatch along non-joined axes: {first.shape} vs {other.shape}"
                )
        bounds = np.cumsum([arr.shape[ax] for arr in arrays])[:-1]
        return np.concatenate(arrays, axis=ax), (ax, bounds)

    @staticmethod
    def backward(ctx, grad, *arrays):
        ax, bounds = ctx
        return tuple(np.split(grad, bounds, axis=ax))


class Sigmoid(Function):
    @staticmethod
    def forward(a):
        e = np.exp(-np.abs(a))
        out = np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return out, out

    @staticmethod
    def backward(out, grad, a):
        return (grad * out * (1.0 - out),)


class ReLU(Function):
    @staticmethod
    def forward(a):
        return np.maximum(a, 0.0), None

    @staticmethod
    def backward(ctx, grad, a):
        return (grad * (a > 0),)


class SoftmaxRows(Function):
    @staticmethod
    def forward(a):
        shifted = np.exp(a - a.max(axis=-1, keepdims=True))
        out = shifted / shifted.sum(axis=-1, keepdims=True)
        return out, out

    @staticmethod
    def backward(out, grad, a):
        inner = (grad * out).sum(axis=-1, keepdims=True)
        return (out * (grad - inner),)


class MeanRows(Function):
    @staticmethod
    def forward(a):
        if a.ndim < 2 or a.shape[-2] < 1:
            raise ShapeError(f"mean_rows needs at least one row, got shape {a.shape}")
        return a.mean(axis=-2, keepdims=True), a.shape[-2]

    @staticmethod
    def backward(rows, grad, a):
        return (np.broadcast_to(grad / rows, a.shape).copy(),)


class MeanAll(Function):
    @staticmethod
    def forward(a):
        return np.asarray(a.mean()), None

    @staticmethod
    def backward(ctx, grad, a):
        return (np.full(a.shape, grad / a.size),)


class Reshape(Function):
    @staticmethod
    def forward(a, shape):
        return a.reshape(shape), None

    @staticmethod
    def backward(ctx, grad, a):
        return (grad.reshape(a.shape),)


def matmul(a, b) -> Tensor:
    return MatMul.apply(as_tensor(a), as_tensor(b))


def transpose(a) -> Tensor:
    return Transpose.apply(as_tensor(a))


def add(a, b) -> Tensor:
    """Element-wise sum; ``b`` may also be a ``(1, n)`` bias row."""
    return Add.apply(as_tensor(a), as_tensor(b))


def hadamard(a, b) -> Tensor:
    return Hadamard.apply(as_tensor(a), as_tensor(b))


def scale(a, factor: float) -> Tensor:
    return Scale.apply(as_tensor(a), factor=float(factor))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    return Concat.apply(*(as_tensor(t) for t in tensors), axis=axis)


def concat_features(a, b) -> Tensor:
    """Join ``(L, p)`` and ``(L, q)`` into ``(L, p + q)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_features leading-extent mismatch: {a.shape} vs {b.shape}")
    return Concat.apply(a, b, axis=-1)


def sigmoid(a) -> Tensor:
    return Sigmoid.apply(as_tensor(a))


def relu(a) -> Tensor:
    return ReLU.apply(as_tensor(a))


def softmax_rows(a) -> Tensor:
    return SoftmaxRows.apply(as_tensor(a))


def mean_rows(a) -> Tensor:
    """Column means over the row axis, keeping it: ``(m, n) -> (1, n)``."""
    return MeanRows.apply(as_tensor(a))


def mean_all(a) -> Tensor:
    return MeanAll.apply(as_tensor(a))


def reshape(a, shape) -> Tensor:
    return Reshape.apply(as_tensor(a), shape=tuple(shape))


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor recorded on ``tape`` or feeding it.

    Leaves receive their gradient even when it is zero. Records are replayed
    newest-first, so each node's gradient is complete before it is consumed.
    """
    if loss.data.size != 1:
        raise BackwardError(f"loss must be a scalar, got shape {loss.shape}")
    if not tape.produced(loss):
        raise BackwardError("loss is not recorded on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for fn, inputs, out, ctx in reversed(tape.records[: loss.node_id + 1]):
        g_out = grads.pop(id(out), None)
        if g_out is None:
            continue
        in_grads = fn.backward(ctx, g_out, *(t.data for t in inputs))
        for t, g in zip(inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if not tape.produced(t):
                leaves[key] = t
            grads[key] = grads[key] + g if key in grads else g
    for key, leaf in leaves.items():
        leaf.grad = grads[key]


def finite_diff_gradient(
    f: Callable[[Tensor], object], x, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, element by element."""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    base = np.array(as_tensor(x).data, dtype=np.float64)
    out = np.zeros_like(base)
    flat = base.reshape(-1)
    grad_flat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = _scalar(f(Tensor(base)))
        flat[i] = orig - h
        minus = _scalar(f(Tensor(base)))
        flat[i] = orig
        grad_flat[i] = (plus - minus) / (2.0 * h)
    return out


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        return value.item()
    return float(value)
