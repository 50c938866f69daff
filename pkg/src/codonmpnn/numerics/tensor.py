"""Dense tensors and a define-by-run gradient tape.

Operations executed while a :class:`Tape` is active are recorded if any input
requires a gradient. ``Tape.backward`` then walks the record in exact reverse
execution order, accumulating gradients additively.
"""

from __future__ import annotations

import contextlib
import threading
import warnings
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

_DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.float32
_local = threading.local()


class NumericalFault(FloatingPointError):
    pass


class ShapeMismatch(ValueError):
    pass


class DisconnectedGraph(UserWarning):
    pass


def set_precision(precision: str) -> None:
    global _default_dtype
    try:
        _default_dtype = _DTYPES[precision]
    except KeyError:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {precision!r}") from None


def get_dtype():
    return _default_dtype


def get_precision() -> str:
    return "f64" if _default_dtype == np.float64 else "f32"


@contextlib.contextmanager
def precision(p: str) -> Iterator[None]:
    old = get_precision()
    set_precision(p)
    try:
        yield
    finally:
        set_precision(old)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the op implementations live in ops.py.
    def __add__(self, other):
        from .ops import add

        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub

        return sub(self, other)

    def __mul__(self, other):
        from .ops import mul

        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from .ops import matmul

        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed ops."""

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self.entries.append((out, inputs, backward))

    def backward(self, loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray] | None:
        """Reverse-mode pass from a scalar ``loss``.

        Sets ``.grad`` on every leaf tensor that requires a gradient. When
        ``params`` is given, returns their gradients by name; parameters that
        never influenced the loss get zeros and a :class:`DisconnectedGraph`
        warning.
        """
        if loss.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for out, inputs, fn in reversed(self.entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            input_grads = fn(g)
            for inp, ig in zip(inputs, input_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                if inp.is_leaf:
                    leaves[key] = inp
        if loss.is_leaf and loss.requires_grad:
            leaves[id(loss)] = loss
        for key, t in leaves.items():
            t.grad = grads.get(key)
        if params is None:
            return None
        out_grads = {}
        missing = []
        for name, p in params.items():
            g = grads.get(id(p)) if id(p) in leaves else None
            if g is None:
                missing.append(name)
                g = np.zeros_like(p.data)
            out_grads[name] = g
        if missing:
            warnings.warn(f"parameters did not influence the loss: {missing[:10]}", DisconnectedGraph, stacklevel=2)
        return out_grads


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def make_output(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericalFault(f"non-finite values produced by {op}")
    out = Tensor(data, dtype=data.dtype)
    out.is_leaf = False
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, tuple(inputs), backward)
    return out
