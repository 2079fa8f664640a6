"""Dense tensor with reverse-mode automatic differentiation.

Every tensor produced by a tracked operation remembers its parents and a
closure that maps the output gradient to parent gradients.  Tensors get a
monotonically increasing id at creation, so sorting the reachable graph by
descending id replays the recorded operations in exact reverse order.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import UsageError

_ids = itertools.count()


class _State(threading.local):
    def __init__(self) -> None:
        self.grad_enabled = True
        self.dtype = np.dtype(np.float32)


_state = _State()


def is_grad_enabled() -> bool:
    return _state.grad_enabled


def default_dtype() -> np.dtype:
    return _state.dtype


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, frozen submodules)."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def shadow_precision() -> Iterator[None]:
    """Create new tensors as float64. Used only for finite-difference gradient checks."""
    prev = _state.dtype
    _state.dtype = np.dtype(np.float64)
    try:
        yield
    finally:
        _state.dtype = prev


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.require(np.asarray(data, dtype=default_dtype() if dtype is None else dtype), requirements="C")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self._id = next(_ids)

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._id = next(_ids)
        if _state.grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- autodiff ----------------------------------------------------------
    def _tape(self) -> list:
        seen = set()
        nodes = []
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in seen or not node.requires_grad:
                continue
            seen.add(node._id)
            nodes.append(node)
            stack.extend(node._parents)
        nodes.sort(key=lambda t: t._id, reverse=True)
        return nodes

    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every reachable tracked tensor."""
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        pending = {self._id: np.ones_like(self.data)}
        for node in self._tape():
            g = pending.pop(node._id, None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = pending.get(parent._id)
                pending[parent._id] = pg if prev is None else prev + pg

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

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = default_dtype()
    return Tensor(np.asarray(x, dtype=dtype), dtype=dtype)
