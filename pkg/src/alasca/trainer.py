"""Training loop: EMA confidence, label correction with agreement, adaptive
smoothing on the sub-classifiers and a pluggable loss on the main head."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError
from .functional import cross_entropy, one_hot
from .network import MultiExitNet, NetSpec
from .noise import NoisyDataset
from .probes import group_jacobian_gap, selection_fscore
from .smoothing import SmoothingSpec, als_loss, smooth_target
from .tensor import Tensor, softmax

log = logging.getLogger(__name__)

LNL_KINDS = ("ce", "gce", "sce", "small-loss", "ls", "als")
RCE_LOG_ZERO = -4.0  # log(0) clamp for reverse cross entropy


class DivergenceError(NumericError):
    pass


@dataclass
class TrainConfig:
    lam: float = 2.0
    warmup_epochs: int = 20
    alpha_initial: float = 0.1
    alpha_final: float = 0.7
    alpha_ramp: float = 0.5  # fraction of epochs over which alpha ramps up
    w_ema: float = 0.7
    tau: float = 3.0
    epochs: int = 60
    batch_size: int = 128
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_milestones: tuple[float, ...] = (2 / 3,)
    lr_decay: float = 0.1
    lnl_loss: str = "ce"
    gce_q: float = 0.7
    sce_w1: float = 0.1
    sce_w2: float = 1.0
    keep_fraction: float = 0.6
    grad_clip: float = 50.0  # global gradient norm cap, a blow-up guard; 0 disables
    lca: bool = True
    lca_all_heads: bool = False
    ema_head: str = "main"
    width: int = 64
    stages: int = 3
    activation: str = "relu"
    seed: int = 0
    probe_every: int = 0  # 0: only the final epoch
    probe_size: int = 512
    probe_stage: str = ""  # empty: last stage

    def __post_init__(self):
        if self.lam < 0:
            raise ContractError(f"lambda must be non-negative, got {self.lam}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ContractError(f"warmup_epochs must lie in [0, epochs={self.epochs}], got {self.warmup_epochs}")
        if not 0 < self.keep_fraction <= 1:
            raise ContractError(f"keep_fraction must lie in (0, 1], got {self.keep_fraction}")
        if self.lnl_loss not in LNL_KINDS:
            raise ContractError(f"unknown lnl_loss {self.lnl_loss!r}; choose from {LNL_KINDS}")
        if not 0 <= self.w_ema <= 1:
            raise ContractError(f"w_ema must lie in [0, 1], got {self.w_ema}")
        if self.grad_clip < 0:
            raise ContractError(f"grad_clip must be non-negative, got {self.grad_clip}")
        if self.tau <= 0:
            raise ContractError(f"tau must be positive, got {self.tau}")
        if self.ema_head not in ("main", "last-sub"):
            raise ContractError(f"ema_head must be 'main' or 'last-sub', got {self.ema_head!r}")

    def alpha_at(self, epoch: int) -> float:
        """Linear ramp from ``alpha_initial`` to ``alpha_final``, then flat."""
        span = self.alpha_ramp * self.epochs
        if span <= 0 or epoch >= span:
            return self.alpha_final
        return self.alpha_initial + (self.alpha_final - self.alpha_initial) * epoch / span

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for m in self.lr_milestones:
            if epoch >= round(m * self.epochs):
                lr *= self.lr_decay
        return lr


class EmaState:
    """Per-instance exponential moving average of logits, zero-initialised."""

    def __init__(self, n: int, num_classes: int, w_ema: float = 0.7, tau: float = 3.0):
        self.z = np.zeros((n, num_classes))
        self.w_ema = w_ema
        self.tau = tau
        self.n = n

    def _check(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= self.n):
            raise ContractError(f"instance id outside [0, {self.n})")
        return idx

    def update(self, idx, z_t) -> None:
        idx = self._check(idx)
        z_t = np.asarray(z_t, dtype=np.float64)
        if not np.all(np.isfinite(z_t)):
            raise NumericError("EMA update with non-finite logits")
        self.z[idx] = self.w_ema * self.z[idx] + (1.0 - self.w_ema) * z_t

    def confidence(self, idx, y_hat) -> np.ndarray:
        """``softmax(tau * z_EMA)[y_hat]``."""
        idx = self._check(idx)
        p = softmax(self.z[idx], self.tau)
        return np.take_along_axis(p, np.asarray(y_hat, dtype=np.int64).reshape(p.shape[:-1] + (1,)), axis=-1)[..., 0]


def ema_update(state: EmaState, i, z_t) -> EmaState:
    state.update(i, z_t)
    return state


def ema_confidence(state: EmaState, i, y_hat):
    return state.confidence(i, y_hat)


def lca(q_main, q_sub_last, given, epoch: int, warmup: int, other_subs=None) -> np.ndarray:
    """Label correction with agreement.

    After warm-up, replace the given label by the main head's prediction when
    the last sub-head predicts the same class and it differs from the given
    label; otherwise keep the given label.  ``other_subs`` (optional list of
    logits) must also agree when supplied.
    """
    given = np.asarray(given, dtype=np.int64)
    if epoch < warmup:
        return given.copy()
    pm = np.asarray(q_main).argmax(axis=-1)
    agree = pm == np.asarray(q_sub_last).argmax(axis=-1)
    for q in other_subs or ():
        agree &= pm == np.asarray(q).argmax(axis=-1)
    return np.where(agree & (pm != given), pm, given)


def sub_target(y_hat, gamma, num_classes: int) -> np.ndarray:
    """``gamma * onehot(y_hat) + (1 - gamma) * 1``; the all-one part is not normalised."""
    gamma = np.asarray(gamma, dtype=np.float64)[..., None]
    return gamma * one_hot(y_hat, num_classes) + (1.0 - gamma)


def lnl_loss(kind: str, q: Tensor, y, cfg: TrainConfig | None = None, epoch: int = 0, info: dict | None = None) -> Tensor:
    """Batch-mean loss for the main classifier."""
    cfg = cfg or TrainConfig()
    L = q.shape[-1]
    e = one_hot(y, L)
    if kind == "ce":
        return cross_entropy(q, e).mean()
    if kind in ("gce", "sce"):
        logp_y = (q.log_softmax() * Tensor(e)).sum(axis=-1)
        if kind == "gce":
            return ((1.0 - (logp_y * cfg.gce_q).exp()) * (1.0 / cfg.gce_q)).mean()
        # reverse CE with log(0) clamped: -sum_k p_k log t_k = -A (1 - p_y)
        rce = (1.0 - logp_y.exp()) * (-RCE_LOG_ZERO)
        return (cross_entropy(q, e) * cfg.sce_w1 + rce * cfg.sce_w2).mean()
    if kind == "small-loss":
        per = cross_entropy(q, e)
        n = per.shape[0]
        keep = max(1, int(round(cfg.keep_fraction * n)))
        order = np.argsort(per.data, kind="stable")
        mask = np.zeros(n)
        mask[order[:keep]] = 1.0
        if info is not None:
            info["selected"] = mask.astype(bool)
        return (per * Tensor(mask)).sum() * (1.0 / keep)
    if kind == "ls":
        spec = SmoothingSpec(cfg.alpha_at(epoch), L)
        return cross_entropy(q, smooth_target(y, spec)).mean()
    if kind == "als":
        return als_loss(q, y).mean()
    raise ContractError(f"unknown lnl_loss {kind!r}")


def alasca_loss(q_list, y_given, y_hat, gamma, cfg: TrainConfig, epoch: int = 0, info: dict | None = None) -> Tensor:
    """Main-head loss on the given labels plus ``lam`` times the smoothed CE of every sub-head."""
    main = lnl_loss(cfg.lnl_loss, q_list[-1], y_given, cfg, epoch, info)
    if cfg.lam == 0 or len(q_list) < 2:
        return main
    t = Tensor(sub_target(y_hat, gamma, q_list[-1].shape[-1]))
    sub = None
    for q in q_list[:-1]:
        term = (-(q.log_softmax() * t)).sum(axis=-1)
        sub = term if sub is None else sub + term
    return main + sub.mean() * cfg.lam


class SGD:
    """Momentum SGD with coupled weight decay: ``v = m v + g + wd w; w -= lr v``.

    With ``clip > 0`` the loss gradients (not the decay term) are rescaled so
    their global norm is at most ``clip``.
    """

    def __init__(self, params, momentum=0.9, weight_decay=5e-4, clip=0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clip = clip
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((p.grad**2).sum()) for p in self.params if p.grad is not None)))

    def step(self, lr: float) -> None:
        scale = 1.0
        if self.clip > 0:
            norm = self.grad_norm()
            if norm > self.clip:
                scale = self.clip / norm
        for p, v in zip(self.params, self.velocity):
            g = p.grad * scale if p.grad is not None else 0.0
            v *= self.momentum
            v += g + self.weight_decay * p.data
            p.data = p.data - lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class TrainResult:
    net: MultiExitNet
    metrics: list[dict]
    gamma_history: np.ndarray  # (epochs, n) EMA confidence at the visit
    inst_history: np.ndarray  # (epochs, n) instantaneous confidence, same label and sharpening
    corrected_history: np.ndarray  # (epochs, n) label used for the sub-heads
    ema: EmaState
    config: TrainConfig = field(repr=False, default=None)


def build_net(cfg: TrainConfig, in_dim: int, num_classes: int) -> MultiExitNet:
    spec = NetSpec(in_dim, num_classes, width=cfg.width, stages=cfg.stages, activation=cfg.activation)
    return MultiExitNet(spec, seed=cfg.seed)


def _accuracy(net, X, y) -> float:
    if len(X) == 0:
        return float("nan")
    return float(np.mean(net.predict(X) == y))


def _mean(x, mask):
    return float(x[mask].mean()) if mask.any() else None


def _std(x, mask):
    return float(x[mask].std()) if mask.any() else None


def train(cfg: TrainConfig, ds: NoisyDataset, test: NoisyDataset | None = None, on_epoch=None) -> TrainResult:
    """Train a multi-exit network on ``ds.noisy_labels``.

    Per mini-batch: forward all heads, fold the main-head logits into the
    EMA, correct labels by agreement, read the EMA confidence of the
    corrected label, and descend on the combined loss.  Emits one train
    record (and one test record if ``test`` is given) per epoch.
    """
    n, L = ds.n, ds.num_classes
    net = build_net(cfg, ds.dim, L)
    opt = SGD(net.parameters, cfg.momentum, cfg.weight_decay, cfg.grad_clip)
    ema = EmaState(n, L, cfg.w_ema, cfg.tau)
    rng = np.random.default_rng(cfg.seed)
    X, y_given, is_clean = ds.features, ds.noisy_labels, ds.is_clean
    stage = cfg.probe_stage or f"stage{cfg.stages}"

    gamma_hist = np.zeros((cfg.epochs, n))
    inst_hist = np.zeros((cfg.epochs, n))
    corr_hist = np.zeros((cfg.epochs, n), dtype=np.int64)
    metrics: list[dict] = []

    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        loss_sum, fired, fired_right = 0.0, 0, 0
        selected = np.zeros(n, dtype=bool)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            q_list = net(Tensor(X[idx]))
            z_t = (q_list[-1] if cfg.ema_head == "main" else q_list[-2]).data
            if not np.all(np.isfinite(z_t)):
                raise DivergenceError(f"non-finite logits at epoch {epoch}, batch starting {start}")
            ema.update(idx, z_t)
            yb = y_given[idx]
            if cfg.lca:
                others = [q.data for q in q_list[:-2]] if cfg.lca_all_heads else None
                y_hat = lca(q_list[-1].data, q_list[-2].data, yb, epoch, cfg.warmup_epochs, others)
            else:
                y_hat = yb.copy()
            gamma = ema.confidence(idx, y_hat)
            inst = np.take_along_axis(softmax(z_t, cfg.tau), y_hat[:, None], axis=1)[:, 0]
            changed = y_hat != yb
            fired += int(changed.sum())
            fired_right += int((changed & (y_hat == ds.clean_labels[idx])).sum())
            gamma_hist[epoch, idx] = gamma
            inst_hist[epoch, idx] = inst
            corr_hist[epoch, idx] = y_hat

            info: dict = {}
            loss = alasca_loss(q_list, yb, y_hat, gamma, cfg, epoch, info)
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"loss became {value} at epoch {epoch}, batch starting {start}")
            if "selected" in info:
                selected[idx] = info["selected"]
            loss_sum += value * len(idx)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)

        probe = epoch == cfg.epochs - 1 or (cfg.probe_every and (epoch + 1) % cfg.probe_every == 0)
        jc = jn = None
        if probe:
            jc, jn = group_jacobian_gap(net, ds, stage, cfg.probe_size, seed=cfg.seed)
            jc = None if np.isnan(jc) else jc
            jn = None if np.isnan(jn) else jn
        g = gamma_hist[epoch]
        rec = {
            "epoch": epoch,
            "split": "train",
            "accuracy": _accuracy(net, X, y_given),
            "clean_accuracy": _accuracy(net, X, ds.clean_labels),
            "mean_loss": loss_sum / n,
            "gamma_clean_mean": _mean(g, is_clean),
            "gamma_noisy_mean": _mean(g, ~is_clean),
            "gamma_clean_std": _std(g, is_clean),
            "gamma_noisy_std": _std(g, ~is_clean),
            "inst_clean_mean": _mean(inst_hist[epoch], is_clean),
            "inst_noisy_mean": _mean(inst_hist[epoch], ~is_clean),
            "jac_clean": jc,
            "jac_noisy": jn,
            "lca_fire_count": fired,
            "lca_correct_rate": fired_right / fired if fired else None,
            "selection_fscore": selection_fscore(selected, is_clean) if cfg.lnl_loss == "small-loss" else None,
            "lr": lr,
            "alpha": cfg.alpha_at(epoch) if cfg.lnl_loss == "ls" else None,
        }
        metrics.append(rec)
        if test is not None:
            metrics.append({"epoch": epoch, "split": "test", "accuracy": _accuracy(net, test.features, test.clean_labels)})
        if on_epoch is not None:
            on_epoch(rec)
        log.debug("epoch %d loss %.4f acc %.3f", epoch, rec["mean_loss"], rec["clean_accuracy"])

    return TrainResult(net, metrics, gamma_hist, inst_hist, corr_hist, ema, cfg)


def final_test_accuracy(result: TrainResult) -> float | None:
    recs = [m for m in result.metrics if m["split"] == "test"]
    return recs[-1]["accuracy"] if recs else None
