"""Central-difference gradient verification.

Relative error per coordinate is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
A perturbation that flips a ReLU mask or a max-pool argmax straddles a kink
where the function is not differentiable; such coordinates are detected by
comparing those decisions against the unperturbed forward pass and are
skipped (and counted) rather than scored.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class GradCheckResult:
    max_rel_err: float
    n_checked: int
    n_skipped: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.n_checked > 0 and self.max_rel_err < tol


def _traced(fn):
    T._KINK_TRACE = []
    try:
        out = fn()
        trace = T._KINK_TRACE
    finally:
        T._KINK_TRACE = None
    return out, trace


def _same(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-3,
               max_per_tensor: Optional[int] = None, seed: int = 0) -> GradCheckResult:
    """Compare backprop gradients of the scalar ``fn()`` w.r.t. ``tensors``
    against central differences, perturbing each tensor's data in place.

    ``max_per_tensor`` samples that many coordinates per tensor (all if None).
    Tensors should be float64; float32 differences are too noisy at ``eps=1e-3``.
    """
    for t in tensors:
        t.grad = np.zeros_like(t.data)
        t.requires_grad = True
    out, base_trace = _traced(fn)
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = [t.grad.copy() for t in tensors]

    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if max_per_tensor is None or n <= max_per_tensor else rng.choice(n, max_per_tensor, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            fp, tp = _traced(fn)
            flat[c] = orig - eps
            fm, tm = _traced(fn)
            flat[c] = orig
            if not (_same(tp, base_trace) and _same(tm, base_trace)):
                skipped += 1
                continue
            num = (float(fp.data) - float(fm.data)) / (2 * eps)
            a = float(ga.reshape(-1)[c])
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
            checked += 1
    return GradCheckResult(worst, checked, skipped)


def check_model(model, x: np.ndarray, labels, eps: float = 1e-3, max_per_tensor: Optional[int] = 20,
                include_input: bool = True, seed: int = 0) -> GradCheckResult:
    """Grad-check ``softmax_cross_entropy(model(x), labels)`` in float64."""
    m = model.astype(np.float64)
    xt = Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)
    tensors = m.trainable() + ([xt] if include_input else [])
    return grad_check(lambda: T.softmax_cross_entropy(m.forward(xt), labels), tensors, eps, max_per_tensor, seed)
