"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

# entries below this magnitude are compared absolutely
REL_FLOOR = 1e-3


def numeric_gradient(fn: Callable[[], float], arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. ``arr``, perturbed in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = fn()
        flat[k] = orig - step
        down = fn()
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(
    loss_fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5
) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call and return a scalar tensor.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    worst = 0.0
    for p in params:
        analytic = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_gradient(lambda: loss_fn().item(), p.data, step)
        worst = max(worst, relative_error(analytic, numeric))
    for p in params:
        p.zero_grad()
    return worst
