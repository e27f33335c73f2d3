"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def rel_error(a, b, floor: float = 1e-12) -> float:
    """||a - b|| / max(||a||, ||b||, floor) in the Euclidean norm."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def numerical_grad(fn: Callable[[], Tensor], tensor: Tensor, indices=None,
                   eps: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``tensor``.

    ``indices`` restricts the probe to selected flat indices.
    """
    flat = tensor.data.reshape(-1)
    indices = range(flat.size) if indices is None else indices
    out = []
    with no_grad():
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn().item()
            flat[i] = orig - eps
            fm = fn().item()
            flat[i] = orig
            out.append((fp - fm) / (2 * eps))
    return np.array(out)


def analytic_grads(fn: Callable[[], Tensor], tensors: Sequence[Tensor]) -> list[np.ndarray]:
    for t in tensors:
        t.grad = None
    backward(fn())
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                    eps: float = 1e-6) -> float:
    """Worst relative error between autodiff and finite differences over all entries."""
    worst = 0.0
    for t, g in zip(tensors, analytic_grads(fn, tensors)):
        worst = max(worst, rel_error(g.reshape(-1), numerical_grad(fn, t, eps=eps)))
    return worst
