"""Reverse-mode autodiff over numpy arrays.

A :class:`Tensor` wraps an ``np.ndarray``. Operations in this module build an
:class:`OpNode` graph that :meth:`Tensor.backward` walks in reverse
topological order. Parameters are leaves whose ``grad`` buffer is always
allocated and accumulates until :func:`zero_grad` is called.

float32 is the default dtype; float64 is used for gradient checking.
"""

from __future__ import annotations

import contextlib

from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .functional import ShapeError

DEFAULT_DTYPE = np.float32

# when a list, relu masks and maxpool argmaxes are appended here (see gradcheck)
_KINK_TRACE: Optional[list] = None


@dataclass(eq=False)
class OpNode:
    """Record of one differentiable op: what produced a tensor and how to undo it."""

    kind: str
    inputs: Tuple["Tensor", ...]
    saved: object
    backward_fn: Callable[[object, np.ndarray], Sequence[Optional[np.ndarray]]]
    consumed: bool = False


class Tensor:
    def __init__(self, data, requires_grad: bool = False, dtype=None, _node: Optional[OpNode] = None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._node = _node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad.

        A scalar output may omit ``grad``. Each forward graph may be
        back-propagated once; saved activations are released afterwards.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"upstream gradient shape {grad.shape} != tensor shape {self.shape}")

        order = _topological(self)
        grads = {id(self): grad}
        for t in order:
            g = grads.pop(id(t), None)
            node = t._node
            if node is None:
                if t.requires_grad and g is not None:
                    if t.grad is None:
                        t.grad = np.zeros_like(t.data)
                    t.grad += g
                continue
            if node.consumed:
                raise RuntimeError(f"backward already called through '{node.kind}'; rerun the forward pass")
            node.consumed = True
            if g is None:
                continue
            in_grads = node.backward_fn(node.saved, g)
            node.saved = None
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + ig
                else:
                    grads[id(inp)] = ig

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __matmul__(self, other):
        raise NotImplementedError("use dense()")


class Parameter(Tensor):
    """Trainable leaf tensor with a persistent gradient buffer."""

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def _topological(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for inp in t._node.inputs:
                if id(inp) not in seen and inp.requires_grad:
                    stack.append((inp, False))
    order.reverse()
    return order


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference only)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _make(kind, data, inputs, saved, backward_fn) -> Tensor:
    req = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    node = OpNode(kind, tuple(inputs), saved, backward_fn) if req else None
    return Tensor(data, requires_grad=req, _node=node)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# differentiable ops
# ---------------------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    out, cache = F.conv2d_forward(x.data, w.data, None if b is None else b.data, stride, padding)

    def bw(c, g):
        gx, gw, gb = F.conv2d_backward(c, g)
        return (gx, gw) if b is None else (gx, gw, gb)

    inputs = (x, w) if b is None else (x, w, b)
    return _make("conv2d", out, inputs, cache, bw)


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    out, cache = F.conv1d_forward(x.data, w.data, None if b is None else b.data, stride, padding)

    def bw(c, g):
        gx, gw, gb = F.conv1d_backward(c, g)
        return (gx, gw) if b is None else (gx, gw, gb)

    inputs = (x, w) if b is None else (x, w, b)
    return _make("conv1d", out, inputs, cache, bw)


def maxpool2d(x: Tensor, pool_h: int, pool_w: int) -> Tensor:
    out, cache = F.maxpool2d_forward(x.data, pool_h, pool_w)
    if _KINK_TRACE is not None:
        _KINK_TRACE.append(cache[0])
    return _make("maxpool2d", out, (x,), cache, lambda c, g: (F.maxpool2d_backward(c, g),))


def maxpool1d(x: Tensor, pool: int) -> Tensor:
    """Non-overlapping max pooling along the last axis."""
    out, cache = F.maxpool2d_forward(x.data[..., None, :], 1, pool)
    if _KINK_TRACE is not None:
        _KINK_TRACE.append(cache[0])
    return _make(
        "maxpool1d",
        out[..., 0, :],
        (x,),
        cache,
        lambda c, g: (F.maxpool2d_backward(c, g[..., None, :])[..., 0, :],),
    )


def dense(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    out, cache = F.dense_forward(x.data, w.data, None if b is None else b.data)

    def bw(c, g):
        gx, gw, gb = F.dense_backward(c, g)
        return (gx, gw) if b is None else (gx, gw, gb)

    inputs = (x, w) if b is None else (x, w, b)
    return _make("dense", out, inputs, cache, bw)


def relu(x: Tensor) -> Tensor:
    out, mask = F.relu_forward(x.data)
    if _KINK_TRACE is not None:
        _KINK_TRACE.append(mask)
    return _make("relu", out, (x,), mask, lambda m, g: (F.relu_backward(m, g),))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add requires equal shapes, got {a.shape} and {b.shape}")
    return _make("add", a.data + b.data, (a, b), None, lambda _, g: (g, g))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _make("reshape", x.data.reshape(shape), (x,), src, lambda s, g: (g.reshape(s),))


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(x, (x.shape[0], -1))


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    out = np.ascontiguousarray(np.swapaxes(x.data, a, b))
    return _make("swapaxes", out, (x,), None, lambda _, g: (np.ascontiguousarray(np.swapaxes(g, a, b)),))


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardise each sample over all of its non-batch axes."""
    out, cache = F.layer_norm_forward(x.data, eps)
    return _make("layer_norm", out, (x,), cache, lambda c, g: (F.layer_norm_backward(c, g),))


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the trailing two (spatial) axes: (B,C,H,W) -> (B,C)."""
    H, W = x.shape[-2:]
    out = x.data.mean(axis=(-2, -1))

    def bw(_, g):
        return (np.broadcast_to(g[..., None, None] / (H * W), x.shape).astype(g.dtype),)

    return _make("global_avg_pool", out, (x,), None, bw)


def global_avg_pool1d(x: Tensor) -> Tensor:
    """Mean over the last axis: (B,C,L) -> (B,C)."""
    L = x.shape[-1]
    out = x.data.mean(axis=-1)

    def bw(_, g):
        return (np.broadcast_to(g[..., None] / L, x.shape).astype(g.dtype),)

    return _make("global_avg_pool1d", out, (x,), None, bw)


def weighted_sum(x: Tensor, weights) -> Tensor:
    """Scalar ``sum(x * weights)`` for a constant ``weights`` array."""
    r = np.asarray(weights, dtype=x.dtype)
    if r.shape != x.shape:
        raise ShapeError(f"weights shape {r.shape} != tensor shape {x.shape}")
    return _make("weighted_sum", np.asarray((x.data * r).sum(), dtype=x.dtype), (x,), None,
                 lambda _, g: (g * r,))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    loss, cache = F.softmax_cross_entropy_forward(logits.data, labels)
    return _make(
        "softmax_cross_entropy",
        np.asarray(loss, dtype=logits.dtype),
        (logits,),
        cache,
        lambda c, g: (F.softmax_cross_entropy_backward(c, g).astype(logits.dtype, copy=False),),
    )


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


def sgd_step(params: Iterable[Parameter], lr: float) -> None:
    """Plain gradient descent: ``value -= lr * grad``. Gradients are left in place."""
    for p in params:
        if p.grad is None:
            continue
        p.data -= np.asarray(lr, dtype=p.data.dtype) * p.grad
