"""Label-smoothing targets, the logit regularizer and adaptive smoothing.

Two target conventions are supported:

* ``normalized``:   (1 - a) e_y + (a / L) 1, sums to one.
* ``unnormalized``: (1 - a) e_y + a 1, sums to (1 - a) + a L.

Cross entropy against the normalized target splits exactly as
``(1 - a) * CE(f, e_y) + (a / L) * omega(f)``, and against the
unnormalized one as ``(1 - a) * CE(f, e_y) + a * omega(f)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .functional import cross_entropy, one_hot
from .tensor import Tensor, check_finite, softmax

CONVENTIONS = ("normalized", "unnormalized")


@dataclass(frozen=True)
class SmoothingSpec:
    alpha: float
    num_classes: int
    convention: str = "normalized"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.num_classes < 2:
            raise ContractError(f"need at least two classes, got {self.num_classes}")
        if self.convention not in CONVENTIONS:
            raise ContractError(f"unknown convention {self.convention!r}")

    @property
    def uniform_mass(self) -> float:
        """Weight added to every class."""
        if self.convention == "normalized":
            return self.alpha / self.num_classes
        return self.alpha


def smooth_target(y, spec: SmoothingSpec) -> np.ndarray:
    """Smoothed target vector (or matrix for an array of labels)."""
    e = one_hot(y, spec.num_classes)
    return (1.0 - spec.alpha) * e + spec.uniform_mass


def omega(logits) -> Tensor:
    """``L * logsumexp(f) - sum(f)``, minimal (= L log L) at equal logits."""
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    check_finite(logits, "logits")
    L = logits.shape[-1]
    return logits.logsumexp() * float(L) - logits.sum(axis=-1)


def omega_grad(logits) -> np.ndarray:
    """Closed-form gradient of omega: ``L * softmax(f) - 1``."""
    f = check_finite(logits, "logits")
    return f.shape[-1] * softmax(f) - 1.0


def ls_decomposition_residual(logits, y: int, alpha: float, convention: str = "normalized") -> float:
    """CE against the smoothed target minus its CE + omega expansion.

    The expansion is ``(1 - a) * [CE(f, e_y) + c(a) * omega(f)]`` with
    ``c = a / ((1 - a) L)`` (normalized) or ``c = a / (1 - a)`` (unnormalized).
    Zero up to rounding for every logit vector.
    """
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha must be strictly inside (0, 1), got {alpha}")
    f = Tensor(logits)
    L = f.shape[-1]
    spec = SmoothingSpec(alpha, L, convention)
    lhs = cross_entropy(f, smooth_target(y, spec)).item()
    coef = alpha / ((1.0 - alpha) * L) if convention == "normalized" else alpha / (1.0 - alpha)
    rhs = (1.0 - alpha) * (cross_entropy(f, one_hot(y, L)).item() + coef * omega(f).item())
    return lhs - rhs


def als_loss(logits: Tensor, y, beta=None) -> Tensor:
    """Adaptive smoothing loss ``beta * CE(f, e_y) + (1 - beta) * omega(f)``.

    ``beta`` defaults to the softmax probability of the label under the same
    logits and is held constant with respect to the gradient.
    """
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    L = logits.shape[-1]
    e = one_hot(y, L)
    if beta is None:
        beta = (softmax(logits.data) * e).sum(axis=-1)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != logits.shape[:-1]:
        beta = np.broadcast_to(beta, logits.shape[:-1]).copy()
    ce = cross_entropy(logits, e)
    return ce * Tensor(beta) + omega(logits) * Tensor(1.0 - beta)
