"""Losses over logits that live on the gradient tape.

All functions act on the last axis: a 1-D logit vector gives a 0-d result,
an ``(n, L)`` batch gives one value per row.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import Tensor, check_finite


def one_hot(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ContractError(f"class index out of range [0, {num_classes})")
    return np.eye(num_classes)[y]


def cross_entropy(logits: Tensor, target) -> Tensor:
    """``-sum_i target_i * log softmax(logits)_i``; targets need not sum to one."""
    check_finite(logits, "logits")
    target = np.asarray(target, dtype=np.float64)
    if np.any(target < 0):
        raise ContractError("cross_entropy target has a negative entry")
    if target.shape != logits.shape:
        target = np.broadcast_to(target, logits.shape)
    return -(logits.log_softmax() * Tensor(target)).sum(axis=-1)


def nll(logits: Tensor, y, num_classes: int | None = None) -> Tensor:
    """Cross entropy against one-hot labels."""
    L = num_classes or logits.shape[-1]
    return cross_entropy(logits, one_hot(y, L))
