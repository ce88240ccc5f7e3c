"""Read-only probes over a network and its training history."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .noise import NoisyDataset
from .theory import jacobian_frobenius

MAX_PROBE = 512


def probe_indices(n: int, size: int = MAX_PROBE, seed: int = 0) -> np.ndarray:
    """Seeded, sorted subsample used by every Jacobian probe."""
    if n <= size:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=size, replace=False))


def group_jacobian_gap(net, ds: NoisyDataset, stage: str, size: int | None = MAX_PROBE, seed: int = 0,
                       return_norms: bool = False):
    """Mean input-Jacobian norm of ``stage`` over (clean, noisy) instances.

    ``size=None`` probes the whole dataset.  A group with no members reports
    NaN.
    """
    idx = np.arange(ds.n) if size is None else probe_indices(ds.n, size, seed)
    norms = jacobian_frobenius(net, ds.features[idx], stage)
    clean = ds.is_clean[idx]
    mc = float(norms[clean].mean()) if clean.any() else float("nan")
    mn = float(norms[~clean].mean()) if (~clean).any() else float("nan")
    if return_norms:
        return mc, mn, norms, clean
    return mc, mn


@dataclass
class FScore:
    value: float
    precision: float
    recall: float
    degenerate: bool = False


def selection_fscore(selected, is_clean, detail: bool = False):
    """F1 of a clean-sample selector, with "clean" as the positive class.

    Empty selections or datasets without clean instances give 0 and set
    ``degenerate``.
    """
    selected = np.asarray(selected, dtype=bool)
    is_clean = np.asarray(is_clean, dtype=bool)
    if selected.shape != is_clean.shape:
        raise ValueError(f"mask shapes differ: {selected.shape} vs {is_clean.shape}")
    tp = int(np.sum(selected & is_clean))
    n_sel, n_pos = int(selected.sum()), int(is_clean.sum())
    if n_sel == 0 or n_pos == 0 or tp == 0:
        res = FScore(0.0, tp / n_sel if n_sel else 0.0, tp / n_pos if n_pos else 0.0, True)
    else:
        p, r = tp / n_sel, tp / n_pos
        res = FScore(2 * p * r / (p + r), p, r)
    return res if detail else res.value


@dataclass
class ConfidenceReport:
    ema_std: np.ndarray  # per instance, across epochs
    inst_std: np.ndarray
    ema_mean_traj: dict[str, np.ndarray]  # group -> per-epoch mean
    ema_std_traj: dict[str, np.ndarray]
    inst_mean_traj: dict[str, np.ndarray]
    inst_std_traj: dict[str, np.ndarray]

    @property
    def mean_ema_std(self) -> float:
        return float(self.ema_std.mean())

    @property
    def mean_inst_std(self) -> float:
        return float(self.inst_std.mean())

    @property
    def ema_more_stable(self) -> bool:
        return self.mean_ema_std <= self.mean_inst_std


def confidence_dynamics(ema_hist, inst_hist, is_clean=None) -> ConfidenceReport:
    """Per-instance spread of EMA vs instantaneous confidence.

    Both histories are (epochs, n) arrays.
    """
    ema_hist = np.asarray(ema_hist, dtype=np.float64)
    inst_hist = np.asarray(inst_hist, dtype=np.float64)
    if ema_hist.shape != inst_hist.shape or ema_hist.ndim != 2:
        raise ValueError("histories must be matching (epochs, n) arrays")
    if ema_hist.shape[0] < 2:
        raise ValueError("need at least two epochs of history")
    n = ema_hist.shape[1]
    groups = {"all": np.ones(n, dtype=bool)}
    if is_clean is not None:
        is_clean = np.asarray(is_clean, dtype=bool)
        groups["clean"], groups["noisy"] = is_clean, ~is_clean

    def traj(h, fn):
        return {g: fn(h[:, m], axis=1) if m.any() else np.full(h.shape[0], np.nan) for g, m in groups.items()}

    return ConfidenceReport(
        ema_hist.std(axis=0),
        inst_hist.std(axis=0),
        traj(ema_hist, np.mean),
        traj(ema_hist, np.std),
        traj(inst_hist, np.mean),
        traj(inst_hist, np.std),
    )


CSV_COLUMNS = [
    "epoch", "split", "accuracy", "clean_accuracy", "mean_loss", "gamma_clean_mean", "gamma_noisy_mean",
    "gamma_clean_std", "gamma_noisy_std", "inst_clean_mean", "inst_noisy_mean", "jac_clean", "jac_noisy",
    "lca_fire_count", "lca_correct_rate", "selection_fscore", "lr", "alpha",
]


def export_csv(records: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for rec in records:
            w.writerow({k: ("" if rec.get(k) is None else rec.get(k)) for k in CSV_COLUMNS})
