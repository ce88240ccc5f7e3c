"""Layer primitives for small multi-exit networks."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError
from .tensor import Tensor

ACTIVATIONS = ("relu", "softplus")


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return x.relu()
    if kind == "softplus":
        return x.softplus()
    raise ContractError(f"unknown activation {kind!r}")


class Layer:
    kind = "layer"

    def __init__(self, in_dim: int, out_dim: int, name: str = ""):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.name = name or self.kind

    @property
    def parameters(self) -> list[Tensor]:
        return []

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise DimensionError(
                f"layer {self.name!r} ({self.kind}) expects input dim {self.in_dim}, got shape {x.shape}"
            )
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.in_dim}->{self.out_dim}, name={self.name!r})"


def _he_normal(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_dim, out_dim, rng=None, name="", weight=None, bias=None, scale=1.0):
        super().__init__(in_dim, out_dim, name)
        if weight is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            weight = _he_normal(rng, in_dim, out_dim) * scale
        if bias is None:
            bias = np.zeros(out_dim)
        weight = np.asarray(weight, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weight.shape != (in_dim, out_dim) or bias.shape != (out_dim,):
            raise DimensionError(
                f"layer {self.name!r}: weight {weight.shape} / bias {bias.shape} inconsistent with {in_dim}->{out_dim}"
            )
        self.weight = Tensor(weight, requires_grad=True, name=f"{self.name}.weight")
        self.bias = Tensor(bias, requires_grad=True, name=f"{self.name}.bias")

    @property
    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        return x @ self.weight + self.bias


class Activation(Layer):
    def __init__(self, dim: int, kind: str = "relu", name=""):
        if kind not in ACTIVATIONS:
            raise ContractError(f"unknown activation {kind!r}")
        self.kind = kind
        super().__init__(dim, dim, name)

    def forward(self, x):
        return activate(x, self.kind)


class ReLU(Activation):
    def __init__(self, dim, name=""):
        super().__init__(dim, "relu", name)


class Softplus(Activation):
    def __init__(self, dim, name=""):
        super().__init__(dim, "softplus", name)


class ResidualBlock(Layer):
    """``act(x + fc2(act(fc1(x))))`` with equal input and output width."""

    kind = "residual-block"

    def __init__(self, dim, hidden=None, activation="relu", rng=None, name=""):
        super().__init__(dim, dim, name)
        hidden = hidden or dim
        self.activation = activation
        self.fc1 = Linear(dim, hidden, rng, name=f"{self.name}.fc1")
        # damped second branch keeps the block near identity at init
        self.fc2 = Linear(hidden, dim, rng, name=f"{self.name}.fc2", scale=0.5)

    @property
    def parameters(self):
        return self.fc1.parameters + self.fc2.parameters

    def forward(self, x):
        branch = self.fc2(activate(self.fc1(x), self.activation))
        return activate(x + branch, self.activation)


class Bottleneck(Layer):
    """Linear projection to a narrower width followed by the activation."""

    kind = "bottleneck"

    def __init__(self, in_dim, out_dim, activation="relu", rng=None, name=""):
        if out_dim >= in_dim:
            raise ContractError(f"bottleneck must narrow: {in_dim}->{out_dim}")
        super().__init__(in_dim, out_dim, name)
        self.activation = activation
        self.fc = Linear(in_dim, out_dim, rng, name=f"{self.name}.fc")

    @property
    def parameters(self):
        return self.fc.parameters

    def forward(self, x):
        return activate(self.fc(x), self.activation)


class SoftmaxHead(Linear):
    """Linear map to class logits; the softmax lives in the loss."""

    kind = "softmax-head"


def forward(layers: Sequence[Layer], x: Tensor) -> Tensor:
    """Run ``x`` through ``layers`` in order, recording the tape."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    for layer in layers:
        x = layer(x)
    return x


def collect_parameters(layers: Sequence[Layer]) -> list[Tensor]:
    return [p for layer in layers for p in layer.parameters]
