"""Finite-difference gradient oracle.

Computes gradients purely from repeated forward evaluations (central
differences), so it is independent of the reverse-mode engine it is used
to check.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, zero_grads

__all__ = ["numeric_gradient", "max_relative_error", "check_gradients"]

EPS = 1e-4


def numeric_gradient(loss_fn: Callable[[], Tensor], t: Tensor, eps: float = EPS) -> np.ndarray:
    """Central-difference d(loss)/d(t), perturbing one entry of t at a time."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn().item()
        flat[i] = orig - eps
        down = loss_fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max over entries of |a - n| / max(|a|, |n|, 1e-6)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    eps: float = EPS,
) -> dict[str, float]:
    """Compare taped gradients of ``loss_fn`` against central differences.

    Returns the max relative error per named parameter.  ``loss_fn`` must
    rebuild the forward pass on every call (it is invoked 2 * n_entries + 1
    times).
    """
    tensors = [t for _, t in params]
    zero_grads(tensors)
    loss_fn().backward()
    analytic = {name: t.grad.copy() for name, t in params}
    errors: dict[str, float] = {}
    for name, t in params:
        numeric = numeric_gradient(loss_fn, t, eps=eps)
        errors[name] = max_relative_error(analytic[name], numeric)
    return errors
