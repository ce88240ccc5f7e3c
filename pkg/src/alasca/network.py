"""Multi-exit network: a residual feature extractor with one classifier per stage."""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .layers import Bottleneck, Linear, ResidualBlock, SoftmaxHead, activate
from .tensor import Tensor


@dataclass(frozen=True)
class NetSpec:
    in_dim: int
    num_classes: int
    width: int = 64
    stages: int = 3
    activation: str = "relu"
    bottleneck: int | None = None  # defaults to width // 2

    @property
    def num_classifiers(self) -> int:
        return self.stages + 1


class MultiExitNet:
    """``stem -> stage_1 -> ... -> stage_S -> main head``.

    A sub-classifier (bottleneck + linear) taps the end of every stage, so
    there are ``C - 1 = S`` sub-heads and ``C = S + 1`` classifiers overall.
    ``forward`` returns logits ``[q^1, ..., q^C]`` with the main head last.
    """

    def __init__(self, spec: NetSpec, seed: int = 0):
        if spec.stages < 1:
            raise ContractError("need at least one stage")
        self.spec = spec
        rng = np.random.default_rng(seed)
        W, act = spec.width, spec.activation
        neck = spec.bottleneck or max(1, W // 2)
        self.stem = Linear(spec.in_dim, W, rng, name="stem")
        self.stages = [ResidualBlock(W, W, act, rng, name=f"stage{k + 1}") for k in range(spec.stages)]
        self.sub_heads = [
            (Bottleneck(W, neck, act, rng, name=f"sub{k + 1}.neck"),
             SoftmaxHead(neck, spec.num_classes, rng, name=f"sub{k + 1}.fc"))
            for k in range(spec.stages)
        ]
        self.main_head = SoftmaxHead(W, spec.num_classes, rng, name="main")

    @property
    def C(self) -> int:
        return len(self.sub_heads) + 1

    @property
    def parameters(self) -> list[Tensor]:
        params = list(self.stem.parameters)
        for stage in self.stages:
            params += stage.parameters
        for neck, fc in self.sub_heads:
            params += neck.parameters + fc.parameters
        return params + self.main_head.parameters

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(p.name, p) for p in self.parameters]

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.zero_grad()

    def trace(self, x) -> dict[str, Tensor]:
        """All intermediate outputs: ``stage{k}``, ``sub{k}``, ``main``."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.shape[-1] != self.spec.in_dim:
            raise DimensionError(f"layer 'stem' expects input dim {self.spec.in_dim}, got shape {x.shape}")
        out: dict[str, Tensor] = {}
        h = activate(self.stem(x), self.spec.activation)
        for k, (stage, (neck, fc)) in enumerate(zip(self.stages, self.sub_heads), start=1):
            h = stage(h)
            out[f"stage{k}"] = h
            out[f"sub{k}"] = fc(neck(h))
        out["main"] = self.main_head(h)
        return out

    def forward(self, x) -> list[Tensor]:
        t = self.trace(x)
        return [t[f"sub{k}"] for k in range(1, self.C)] + [t["main"]]

    __call__ = forward

    def layer_ids(self) -> list[str]:
        return [f"stage{k}" for k in range(1, self.C)] + [f"sub{k}" for k in range(1, self.C)] + ["main"]

    def predict(self, X: np.ndarray) -> np.ndarray:
        with self.frozen():
            return self.forward(Tensor(X))[-1].data.argmax(axis=-1)

    @contextmanager
    def frozen(self):
        """Detach parameters from the tape for read-only probes."""
        params = self.parameters
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, f in zip(params, flags):
                p.requires_grad = f

    # -- (de)serialization ----------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters:
            if p.name not in state:
                raise ContractError(f"missing parameter {p.name!r}")
            arr = np.asarray(state[p.name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"parameter {p.name!r}: expected {p.shape}, got {arr.shape}")
            p.data = arr.copy()
