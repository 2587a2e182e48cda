"""Dense tensor value type and the recording tape for reverse-mode autodiff.

A Tensor wraps a row-major numpy buffer (float32 unless a float64 precision
scope is active). Ops executed while a Tape is the active recorder append a
node per op; ``backward`` walks those nodes in reverse to fill ``grad`` on
every tracked leaf.
"""

import contextlib
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional, Sequence

import numpy as np

from ..errors import NumericalError, TcaqError

logger = logging.getLogger(__name__)


class TensorError(TcaqError):
    """Base exception for tensor errors."""
    pass


class ShapeError(TensorError):
    """Raised when op input shapes are invalid for the op."""
    pass


class NonFiniteError(TensorError, NumericalError):
    """Raised when an op receives NaN or Inf."""
    pass


# -----------------------------------------------------------------------------
# Thread-local state: default dtype, active tapes, grad switch
# -----------------------------------------------------------------------------

_state = threading.local()

_PRECISIONS = {"float32": np.float32, "float64": np.float64}


def get_default_dtype() -> type:
    """Return the float dtype new tensors are created with."""
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the default tensor dtype ("float32" or "float64")."""
    if name not in _PRECISIONS:
        raise TensorError(f"Unknown precision '{name}', expected one of {sorted(_PRECISIONS)}")
    previous = get_default_dtype()
    _state.dtype = _PRECISIONS[name]
    try:
        yield
    finally:
        _state.dtype = previous


def _tape_stack() -> list["Tape"]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def current_tape() -> Optional["Tape"]:
    """Return the innermost active tape of this thread, if recording."""
    if not getattr(_state, "grad_enabled", True):
        return None
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend tape recording inside the block."""
    previous = getattr(_state, "grad_enabled", True)
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


# -----------------------------------------------------------------------------
# Tensor
# -----------------------------------------------------------------------------

class Tensor:
    """Dense N-dimensional float array with an optional gradient buffer."""

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        array = np.asarray(data, dtype=get_default_dtype())
        if array.ndim and not array.flags.c_contiguous:
            array = np.ascontiguousarray(array)
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying buffer."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Return an untracked tensor sharing nothing with this one."""
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        """Add ``grad`` into the gradient buffer."""
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"Gradient shape {grad.shape} does not match tensor shape {self.data.shape}"
            )
        grad = grad.astype(self.data.dtype, copy=False)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operator sugar; ops import lazily since ops.py builds on this module.

    def __add__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other: Any) -> "Tensor":
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.matmul(self, other)


# -----------------------------------------------------------------------------
# Tape
# -----------------------------------------------------------------------------

@dataclass
class TapeNode:
    """One recorded op application."""
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    attrs: dict[str, Any] = field(default_factory=dict)
    saved: dict[str, Any] = field(default_factory=dict)


class Tape:
    """
    Ordered record of the ops applied to tracked tensors.

    Use as a context manager; every op whose inputs require grad is appended
    while the tape is active. Nodes are appended in execution order, so every
    node's inputs were produced before it.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: TapeNode) -> None:
        self.nodes.append(node)

    def leaves(self) -> list[Tensor]:
        """Tracked tensors consumed by the tape but produced outside it."""
        produced = {id(node.output) for node in self.nodes}
        seen: set[int] = set()
        result: list[Tensor] = []
        for node in self.nodes:
            for tensor in node.inputs:
                key = id(tensor)
                if tensor.requires_grad and key not in produced and key not in seen:
                    seen.add(key)
                    result.append(tensor)
        return result

    def replay(self) -> bool:
        """
        Re-run every recorded op on its recorded inputs.

        Returns:
            True when every recomputed output equals the recorded output
            bit for bit.
        """
        from .ops import get_op

        for node in self.nodes:
            op = get_op(node.op)
            arrays = [tensor.data for tensor in node.inputs]
            recomputed = op.forward({}, *arrays, **node.attrs)
            recomputed = np.asarray(recomputed, dtype=node.output.data.dtype)
            if not np.array_equal(recomputed, node.output.data):
                logger.debug("Replay mismatch on op %s", node.op)
                return False
        return True


def backward(
    tape: Tape,
    loss: Tensor,
    leaves: Optional[Sequence[Tensor]] = None,
) -> list[Tensor]:
    """
    Back-propagate ``loss`` through ``tape`` into leaf gradient buffers.

    Leaves the loss does not depend on receive a zero gradient. Tensors that
    do not require grad are never touched.

    Args:
        tape: The tape that recorded the forward pass.
        loss: Single-element tensor to differentiate.
        leaves: Extra leaves to report even if the tape never saw them.

    Returns:
        The leaves whose gradient buffers were populated.

    Raises:
        ShapeError: If ``loss`` has more than one element.
    """
    from .ops import get_op

    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for node in reversed(tape.nodes):
        grad_out = grads.pop(id(node.output), None)
        if grad_out is None:
            continue
        op = get_op(node.op)
        arrays = [tensor.data for tensor in node.inputs]
        input_grads = op.backward(node.saved, grad_out, *arrays, **node.attrs)
        for tensor, grad in zip(node.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad

    targets = tape.leaves()
    if leaves is not None:
        known = {id(tensor) for tensor in targets}
        targets.extend(t for t in leaves if t.requires_grad and id(t) not in known)

    for leaf in targets:
        grad = grads.get(id(leaf))
        if grad is None:
            grad = np.zeros_like(leaf.data)
        leaf.accumulate_grad(np.asarray(grad).reshape(leaf.data.shape))

    return targets
