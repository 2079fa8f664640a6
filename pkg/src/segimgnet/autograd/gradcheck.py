"""Central finite-difference gradient checking in float64."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, shadow_precision


def numerical_grad(f: Callable[[], Tensor], target: Tensor, step: float = 1e-5) -> np.ndarray:
    """d f() / d target by central differences; ``target.data`` is perturbed in place and restored."""
    grad = np.zeros_like(target.data, dtype=np.float64)
    flat = target.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f().item()
        flat[i] = orig - step
        lo = f().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(max|a|, max|b|, tiny); a scale-aware error that tolerates zeros."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = 1e-5) -> float:
    """Largest relative error between analytic and numerical gradients over ``inputs``.

    Run inside :func:`shadow_precision` with float64 inputs; ``f`` must rebuild
    the graph from the current input values on every call.
    """
    for t in inputs:
        t.grad = None
    f().backward()
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(analytic, numerical_grad(f, t, step)))
    return worst


__all__ = ["check_gradients", "numerical_grad", "relative_error", "shadow_precision"]
