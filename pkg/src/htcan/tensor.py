"""Dense tensor type with tape-based reverse-mode differentiation.

Every differentiable kernel in :mod:`htcan.ops` records a node on the active
:class:`Tape` when at least one of its inputs requires a gradient. Outside of
a tape nothing is recorded, which keeps inference allocation-free apart from
the numpy arrays themselves.
"""

from __future__ import annotations

import contextlib
import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ShapeError, UsageError

_state = threading.local()

_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "f32": np.float32,
    "f64": np.float64,
}

_default_dtype = np.float32
_debug = os.environ.get("HTCAN_DEBUG", "") not in ("", "0")


def resolve_dtype(dtype) -> type:
    if dtype is None:
        return get_default_dtype()
    if isinstance(dtype, str):
        try:
            return _DTYPES[dtype]
        except KeyError:
            raise ConfigError(f"unknown precision {dtype!r}; expected float32 or float64") from None
    dt = np.dtype(dtype).type
    if dt not in (np.float32, np.float64):
        raise ConfigError(f"unsupported element type {np.dtype(dtype).name}")
    return dt


def get_default_dtype() -> type:
    return getattr(_state, "dtype", None) or _default_dtype


def set_default_dtype(dtype) -> None:
    """Set the process-wide element precision (``float32`` or ``float64``)."""
    global _default_dtype
    _default_dtype = resolve_dtype(dtype)


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the element precision for the current thread."""
    prev = getattr(_state, "dtype", None)
    _state.dtype = resolve_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = prev


def set_debug(flag: bool) -> None:
    """Enable the finite-value assertion after every forward kernel."""
    global _debug
    _debug = bool(flag)


def debug_enabled() -> bool:
    return _debug


class Tensor:
    """A dense numeric array with optional gradient tracking.

    Image tensors are 4-D ``(n, c, h, w)``; attention internals also use
    token layouts such as ``(batch, tokens, channels)``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None and isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=resolve_dtype(dtype))
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(resolve_dtype(dtype)), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # -- operator sugar (implemented in ops) -------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.getitem(self, key)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.permute(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)):
        # python scalars adopt the active precision
        return Tensor(np.asarray(x, dtype=resolve_dtype(dtype)))
    return Tensor(x, dtype=dtype)


@dataclass(eq=False)
class Node:
    """One executed differentiable operation."""

    op: str
    inputs: tuple[Tensor | None, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass(eq=False)
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; kernels executed inside the ``with`` block append
    their nodes here.
    """

    nodes: list[Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        elif self in stack:
            stack.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        self.nodes.clear()


def _tape_stack() -> list[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_record() -> Iterator[None]:
    """Suspend tape recording for the current thread."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack[:] = saved


def record(op: str, out_data: np.ndarray, inputs: Sequence[Tensor | None], backward) -> Tensor:
    """Wrap ``out_data`` as a Tensor and register a node if gradients flow."""
    if _debug and not np.all(np.isfinite(out_data)):
        if all(t is None or np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError(f"{op} produced non-finite values from finite inputs")
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t is not None and t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(Node(op, tuple(inputs), out, backward))
    return out


def backward(loss: Tensor, tape: Tape, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep over ``tape`` seeded at the scalar ``loss``.

    Every leaf that requires a gradient gets ``.grad`` overwritten with
    dLoss/dLeaf. Leaves listed in ``params`` that never touched the loss get
    zeros. Returns the leaf -> gradient map.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(node.output) for node in tape.nodes}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}

    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        for t in node.inputs:
            if t is not None and t.requires_grad and id(t) not in produced:
                leaves.setdefault(id(t), t)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if t is None or gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise ShapeError(f"{node.op}: gradient shape {gi.shape} does not match input {t.shape}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi

    result: dict[Tensor, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.data.dtype)
        result[leaf] = leaf.grad
    if params is not None:
        for p in params:
            if p not in result:
                p.grad = np.zeros_like(p.data)
                result[p] = p.grad
    if loss.requires_grad and id(loss) not in produced:
        loss.grad = np.ones_like(loss.data)
        result[loss] = loss.grad
    return result
