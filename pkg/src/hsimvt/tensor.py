"""Dense tensors with tape-based reverse-mode differentiation.

A ``GradGraph`` is a tape: every differentiable op executed while a graph
is active appends one adjoint closure. ``backward`` replays the tape in
exact reverse execution order, so each op sees the fully accumulated
gradient of its output before propagating to its inputs.

Training runs in float32; gradient checks use float64 tensors. Ops never
change the dtype of their inputs.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import UsageError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_ACTIVE = threading.local()


class Tensor:
    """N-dimensional value array with optional gradient storage."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def active_graph():
    """The graph currently recording on this thread, or None."""
    return getattr(_ACTIVE, "graph", None)


class GradGraph:
    """Ordered record of executed ops; replays adjoints in reverse order.

    Use as a context manager around the forward pass, then call
    ``backward(loss)`` once. A graph is confined to the thread that
    created it and cannot nest with another active graph.
    """

    def __init__(self):
        self._tape = []
        self._consumed = False

    def __enter__(self) -> "GradGraph":
        if active_graph() is not None:
            raise UsageError("another GradGraph is already recording on this thread")
        _ACTIVE.graph = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _ACTIVE.graph = None
        return False

    def record(self, backward_fn):
        """Append one adjoint closure; called by ops while recording."""
        self._tape.append(backward_fn)

    def __len__(self):
        return len(self._tape)

    def backward(self, loss: Tensor):
        """Populate ``grad`` on every requires_grad tensor reachable from ``loss``."""
        if loss.data.size != 1:
            raise UsageError(f"loss must be scalar, got shape {loss.data.shape}")
        if self._consumed:
            raise UsageError("this graph was already replayed; grads would double")
        self._consumed = True
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._tape):
            fn()


def backward(loss: Tensor, graph: GradGraph):
    """Replay ``graph`` to populate gradients of ``loss`` w.r.t. its inputs."""
    graph.backward(loss)
