"""Reverse-mode autodiff substrate: a dense float64 tensor plus a recording tape.

The design is deliberately small: tensors are immutable value carriers, and a
``Tape`` records every primitive applied while it is active.  Calling
``Tape.backward`` replays the recorded entries in reverse, accumulating
gradients additively whenever a tensor feeds several consumers.  Gradient
buffers are freshly zero-initialized on every backward pass.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ValidationError

Array = np.ndarray


class Tensor:
    """Dense n-dimensional float64 array, the universal value carrier.

    A Tensor is treated as immutable after creation: operations return new
    tensors and never write into an existing ``data`` buffer.  ``grad`` is
    populated by ``Tape.backward`` and is the only mutable slot.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64), requires_grad=requires_grad)


class TapeEntry:
    """One recorded primitive application.

    ``backward`` maps the upstream gradient of the output to a tuple of
    gradient arrays, one per input (``None`` for inputs that need no grad).
    Values needed for the backward pass are captured in the closure.
    """

    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor,
                 backward: Callable[[Array], tuple]):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward = backward


class Gradients:
    """Result of a backward pass; maps tensors to their gradient arrays."""

    def __init__(self, table: dict):
        self._table = table

    def of(self, t: Tensor) -> Array:
        """Gradient of the loss w.r.t. ``t`` (zeros if the loss ignores it)."""
        g = self._table.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g


class Tape:
    """Ordered record of primitive applications (the computation record).

    Confined to a single worker at a time: recording and backward must not
    run concurrently on the same tape.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []

    # -- recording ---------------------------------------------------------

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor,
               backward: Callable[[Array], tuple]) -> None:
        self.entries.append(TapeEntry(op, inputs, output, backward))

    def __enter__(self) -> "Tape":
        push_tape(self)
        return self

    def __exit__(self, *exc):
        pop_tape(self)
        return False

    # -- backward ----------------------------------------------------------

    def backward(self, loss: Tensor, seed: float = 1.0) -> Gradients:
        """Replay the tape in reverse from ``loss`` and return all gradients.

        Every recorded entry is visited exactly once; entries whose output
        received no upstream gradient contribute nothing.  Tensors with
        ``requires_grad`` get their ``grad`` slot refreshed (zero-initialized,
        then accumulated), replacing any value from an earlier pass.
        """
        if loss.data.size != 1:
            raise ValidationError(f"backward needs a scalar loss, got shape {loss.shape}")
        table: dict[int, Array] = {id(loss): np.full_like(loss.data, seed)}
        for entry in reversed(self.entries):
            out_grad = table.get(id(entry.output))
            if out_grad is None:
                continue
            in_grads = entry.backward(out_grad)
            for inp, g in zip(entry.inputs, in_grads):
                if g is None:
                    continue
                if g.shape != inp.data.shape:
                    raise ValidationError(
                        f"op {entry.op!r} produced gradient of shape {g.shape} "
                        f"for input of shape {inp.data.shape}")
                acc = table.get(id(inp))
                table[id(inp)] = g if acc is None else acc + g
        grads = Gradients(table)
        seen: set[int] = set()
        for entry in self.entries:
            for t in entry.inputs + (entry.output,):
                if id(t) not in seen:
                    seen.add(id(t))
                    if t.requires_grad:
                        t.grad = grads.of(t)
        if loss.requires_grad and id(loss) not in seen:
            loss.grad = grads.of(loss)
        return grads


# Active-tape stack.  A tape is confined to one worker; the stack is
# process-local by construction (no threads share it in this codebase).
_TAPES: list[Tape] = []


def push_tape(tape: Tape) -> None:
    _TAPES.append(tape)


def pop_tape(tape: Tape) -> None:
    if not _TAPES or _TAPES[-1] is not tape:
        raise RuntimeError("tape stack corrupted: popping a tape that is not on top")
    _TAPES.pop()


def active_tape() -> Optional[Tape]:
    return _TAPES[-1] if _TAPES else None


def taping(*tensors: Tensor) -> bool:
    """True when a tape is active and any argument participates in autodiff."""
    return active_tape() is not None and any(t.requires_grad for t in tensors)


def emit(op: str, inputs: Iterable[Tensor], out_data: Array,
         backward: Callable[[Array], tuple]) -> Tensor:
    """Create the output tensor of a primitive and record it if taping."""
    inputs = tuple(inputs)
    needs = taping(*inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        active_tape().record(op, inputs, out, backward)
    return out
