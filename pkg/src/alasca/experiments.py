"""Desk-scale experiments reproducing the directional claims.

The desk task: 2000 training points in 20 dimensions, 4 Gaussian classes,
symmetric noise, 60 epochs, evaluated on a fresh clean test set.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .noise import NoisyDataset, inject, make_gaussian_dataset
from .probes import confidence_dynamics, group_jacobian_gap
from .trainer import TrainConfig, TrainResult, final_test_accuracy, train


@dataclass(frozen=True)
class DeskTask:
    n: int = 2000
    dim: int = 20
    classes: int = 4
    separation: float = 3.0
    noise: str = "sym"
    epsilon: float = 0.4
    test_n: int = 2000

    def datasets(self, seed: int) -> tuple[NoisyDataset, NoisyDataset]:
        train_ds = make_gaussian_dataset(self.n, self.dim, self.classes, self.separation, 1000 + seed)
        train_ds = inject(train_ds, self.noise, self.epsilon, 2000 + seed)
        test_ds = make_gaussian_dataset(self.test_n, self.dim, self.classes, self.separation, 3000 + seed)
        return train_ds, test_ds


# 2000 points give ~30 steps per epoch at this batch size
DESK_TRAIN = {"batch_size": 64}


def plain_config(seed: int, **kw) -> TrainConfig:
    """Cross entropy on the main head only."""
    return TrainConfig(**{**DESK_TRAIN, "lam": 0.0, "lnl_loss": "ce", "lca": False, "seed": seed, **kw})


def ls_config(seed: int, alpha: float, **kw) -> TrainConfig:
    """Uniform label smoothing on the main head at a fixed factor."""
    return TrainConfig(**{**DESK_TRAIN, "lam": 0.0, "lnl_loss": "ls", "alpha_initial": alpha,
                          "alpha_final": alpha, "lca": False, "seed": seed, **kw})


def alasca_config(seed: int, **kw) -> TrainConfig:
    return TrainConfig(**{**DESK_TRAIN, "seed": seed, **kw})


def run(task: DeskTask, cfg: TrainConfig) -> TrainResult:
    train_ds, test_ds = task.datasets(cfg.seed)
    return train(cfg, train_ds, test_ds)


def shrinkage_run(task: DeskTask, seed: int, alphas=(0.0, 0.3, 0.6), stage: str | None = None) -> dict[float, dict]:
    """Final-stage Jacobian norms after uniform smoothing at each factor."""
    out = {}
    train_ds, test_ds = task.datasets(seed)
    for a in alphas:
        cfg = ls_config(seed, a)
        res = train(cfg, train_ds, test_ds)
        layer = stage or f"stage{cfg.stages}"
        mc, mn, norms, _ = group_jacobian_gap(res.net, train_ds, layer, seed=seed, return_norms=True)
        out[a] = {"pooled": float(norms.mean()), "clean": mc, "noisy": mn, "test_acc": final_test_accuracy(res)}
    return out


def alasca_summary(task: DeskTask, seed: int) -> dict:
    train_ds, test_ds = task.datasets(seed)
    return summarize(train(alasca_config(seed), train_ds, test_ds), train_ds)


def summarize(res: TrainResult, train_ds: NoisyDataset) -> dict:
    """Final-epoch Jacobian gap, confidence gap and confidence stability of one run."""
    last = [m for m in res.metrics if m["split"] == "train"][-1]
    dyn = confidence_dynamics(res.gamma_history, res.inst_history, train_ds.is_clean)
    return {
        "test_acc": final_test_accuracy(res),
        "jac_clean": last["jac_clean"],
        "jac_noisy": last["jac_noisy"],
        "gamma_clean": last["gamma_clean_mean"],
        "gamma_noisy": last["gamma_noisy_mean"],
        "ema_std": dyn.mean_ema_std,
        "inst_std": dyn.mean_inst_std,
    }


def accuracy_pair(task: DeskTask, seed: int) -> tuple[float, float]:
    """(plain CE, ALASCA) test accuracy on the same data."""
    train_ds, test_ds = task.datasets(seed)
    ce = final_test_accuracy(train(plain_config(seed), train_ds, test_ds))
    al = final_test_accuracy(train(alasca_config(seed), train_ds, test_ds))
    return ce, al


def with_noise(task: DeskTask, epsilon: float) -> DeskTask:
    return replace(task, epsilon=epsilon)
