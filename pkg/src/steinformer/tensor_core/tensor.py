"""Dense tensor with reverse-mode differentiation.

A :class:`Tensor` wraps a contiguous numpy array. Operations in
:mod:`steinformer.tensor_core.ops` build a graph of ``Tensor`` nodes whose
``_backward`` closures map the output gradient to one gradient per parent.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import UsageError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """N-dimensional real array that optionally participates in autodiff.

    Storage is row-major and owned by the tensor; ops never return views of
    another tensor's buffer. ``grad`` is ``None`` until :func:`backward`
    reaches the tensor and accumulates on repeated calls until
    :meth:`zero_grad`.
    """

    __array_priority__ = 100

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: Sequence["Tensor"] = (),
        _backward: Optional[BackwardFn] = None,
        name: Optional[str] = None,
    ) -> None:
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        # ascontiguousarray would promote 0-d scalars to shape (1,)
        self.data: np.ndarray = np.ascontiguousarray(arr) if arr.ndim else arr.copy()
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = tuple(_parents)
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # Operator sugar; the actual kernels live in ops.
    def __add__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.elementwise("add", self, other)
        return ops.elementwise("shift", self, scalar=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.elementwise("sub", self, other)
        return ops.elementwise("shift", self, scalar=-float(other))

    def __rsub__(self, other):
        from . import ops

        return ops.elementwise("shift", ops.elementwise("scale", self, scalar=-1.0), scalar=float(other))

    def __mul__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.elementwise("mul", self, other)
        return ops.elementwise("scale", self, scalar=float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.elementwise("div", self, other)
        return ops.elementwise("scale", self, scalar=1.0 / float(other))

    def __neg__(self):
        from . import ops

        return ops.elementwise("scale", self, scalar=-1.0)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor that contributed to ``loss``.

    Gradients accumulate across calls; call ``zero_grad`` on parameters
    between optimizer steps.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("backward() called on a tensor that does not require grad")
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
