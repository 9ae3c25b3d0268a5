"""Tensor container and the reverse-mode tape.

Every differentiable op computes its forward value with numpy and, when a
tape is active and any input requires a gradient, appends one record holding
the output, the inputs and a closure mapping the output gradient to input
gradients. ``Tape.backward`` walks the records in reverse.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidArgument, InvalidState


class Tensor:
    """Dense array with an optional gradient slot."""

    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(value, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.value.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops
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

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Records differentiable ops executed inside ``with Tape():``."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn, bool]] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def __len__(self) -> int:
        return len(self.records)

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        """Propagate d(loss) back through every recorded op.

        Parameter gradients accumulate (they are not reset here).
        """
        if seed is None:
            if loss.value.size != 1:
                raise InvalidArgument(f"backward needs a scalar loss, got shape {loss.shape}")
            seed = np.ones_like(loss.value)
        if not np.all(np.isfinite(loss.value)):
            raise InvalidState("loss is not finite")
        # intermediate grads are local to this pass; leaves keep accumulating
        interm: dict[int, np.ndarray] = {id(loss): np.asarray(seed, dtype=loss.dtype)}
        produced = {id(rec[0]) for rec in self.records}
        leaf_seed = id(loss) not in produced
        if leaf_seed and loss.requires_grad:
            loss.accumulate(seed)
        for out, inputs, fn, always in reversed(self.records):
            g = interm.pop(id(out), None)
            if g is None and not always:
                continue
            grads = fn(g)
            for x, gx in zip(inputs, grads):
                if gx is None or not x.requires_grad:
                    continue
                if id(x) in produced:
                    prev = interm.get(id(x))
                    interm[id(x)] = gx if prev is None else prev + gx
                else:
                    x.accumulate(gx)
        self.records.clear()


def record(out: Tensor, inputs: Sequence[Tensor], fn: BackwardFn, always: bool = False) -> Tensor:
    """Append an op to the active tape if any input needs a gradient.

    ``always=True`` makes backward call ``fn(None)`` even when no gradient
    reached ``out``; used by ops that collect their output gradient through
    a side channel.
    """
    tape = Tape.active()
    if tape is not None and any(x.requires_grad for x in inputs):
        out.requires_grad = True
        tape.records.append((out, tuple(inputs), fn, always))
    return out
