"""Tensor value type and the gradient tape that records differentiable ops."""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

_local = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when a precondition of an operation is violated."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up where finite values are required."""


def _active_tapes() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


class Tensor:
    """Dense float64 array with an optional gradient requirement.

    Tensors are treated as immutable: ops always allocate new arrays.
    Parameters are the exception, their ``data`` is replaced (never mutated
    in place) by optimizers.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def from_flat(cls, shape: Sequence[int], data: Sequence[float], requires_grad: bool = False) -> "Tensor":
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeError(f"dimensions must be positive, got {shape}")
        flat = np.array(data, dtype=np.float64).ravel()
        if int(np.prod(shape)) != flat.size:
            raise ShapeError(f"shape {shape} needs {int(np.prod(shape))} values, got {flat.size}")
        return cls(flat.reshape(shape), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

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

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, p: float):
        from . import ops
        return ops.power(self, p)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.index(self, idx)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()


def Parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: tuple, backward: Callable):
        self.out = out
        self.parents = parents
        self.backward = backward


class GradTape:
    """Records differentiable ops executed inside its ``with`` block.

    Nodes are appended as ops run, so the list is already in topological
    order. A fresh tape is expected per forward pass.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "GradTape":
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc):
        stack = _active_tapes()
        stack.remove(self)
        return False

    def _record(self, node: _Node) -> None:
        self.nodes.append(node)
        self._produced.add(id(node.out))

    def leaves(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for node in self.nodes:
            for p in node.parents:
                if isinstance(p, Tensor) and p.requires_grad and id(p) not in self._produced:
                    seen.setdefault(id(p), p)
        return list(seen.values())

    def _propagate(self, loss: Tensor) -> dict[int, np.ndarray]:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.backward(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not isinstance(p, Tensor) or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return grads

    def gradient(self, loss: Tensor, sources: Iterable[Tensor]) -> list[np.ndarray]:
        """Gradients of ``loss`` w.r.t. ``sources``; unreached sources get zeros."""
        grads = self._propagate(loss)
        out = []
        for s in sources:
            g = grads.get(id(s))
            out.append(np.zeros_like(s.data) if g is None else np.reshape(g, s.shape))
        return out


def backward(loss: Tensor, tape: GradTape) -> dict[int, np.ndarray]:
    """Map ``id(leaf) -> gradient`` for every trainable leaf the tape saw."""
    grads = tape._propagate(loss)
    return {
        id(leaf): np.reshape(grads[id(leaf)], leaf.shape) if id(leaf) in grads else np.zeros_like(leaf.data)
        for leaf in tape.leaves()
    }


def record_op(out_data: np.ndarray, parents: Sequence, backward_fn: Callable) -> Tensor:
    """Wrap ``out_data`` as a Tensor, registering ``backward_fn`` on the active tape.

    ``backward_fn(grad_out)`` returns one gradient (or None) per parent.
    Nothing is recorded when no tape is active or no parent needs a gradient.
    """
    out = Tensor.__new__(Tensor)
    out.data = out_data if out_data.dtype == np.float64 else out_data.astype(np.float64)
    out.name = None
    stack = _active_tapes()
    needs = bool(stack) and any(isinstance(p, Tensor) and p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        stack[-1]._record(_Node(out, tuple(parents), backward_fn))
    return out


def is_recording() -> bool:
    return bool(_active_tapes())


def check_finite(t: Tensor | np.ndarray, what: str = "tensor") -> None:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))
        raise NonFiniteError(f"{what} has {len(bad)} non-finite value(s), first at index {tuple(bad[0])}")
