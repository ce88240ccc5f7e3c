"""Synthetic Gaussian datasets and label-noise injection.

Injectors never touch ``clean_labels``; they return a new dataset whose
``noisy_labels`` and ``is_clean`` reflect the corruption.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import softmax as _softmax
from scipy.stats import truncnorm

from .errors import ContractError

# class -> class flips used for CIFAR-10 style asymmetric noise:
# truck->automobile, bird->airplane, deer->horse, cat->dog
CIFAR10_MAPPING = {9: 1, 2: 0, 4: 7, 3: 5}
INSTANCE_RATE_STD = 0.1


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    rate: float = 0.0
    seed: int = 0
    mapping: dict | None = None


@dataclass
class NoisyDataset:
    features: np.ndarray
    clean_labels: np.ndarray
    noisy_labels: np.ndarray
    num_classes: int
    noise_spec: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
        self.noisy_labels = np.asarray(self.noisy_labels, dtype=np.int64)
        n = len(self.features)
        if self.clean_labels.shape != (n,) or self.noisy_labels.shape != (n,):
            raise ContractError("label arrays must match the number of feature rows")
        for labels in (self.clean_labels, self.noisy_labels):
            if n and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ContractError(f"labels must lie in [0, {self.num_classes})")

    @property
    def is_clean(self) -> np.ndarray:
        return self.clean_labels == self.noisy_labels

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "NoisyDataset":
        return replace(self, features=self.features[idx], clean_labels=self.clean_labels[idx],
                       noisy_labels=self.noisy_labels[idx])

    def flip_fraction(self) -> float:
        return float(np.mean(~self.is_clean))


def class_means(D: int, L: int, separation: float) -> np.ndarray:
    """Vertices of a regular simplex scaled so every pair is ``separation`` apart."""
    if L - 1 > D:
        raise ContractError(f"need D >= L - 1 for a simplex, got D={D}, L={L}")
    E = np.eye(L) - 1.0 / L
    # orthonormal basis of the centered simplex, padded into R^D
    U, _, _ = np.linalg.svd(E)
    coords = E @ U[:, : L - 1]
    coords *= separation / np.linalg.norm(coords[0] - coords[1])
    M = np.zeros((L, D))
    M[:, : L - 1] = coords
    return M


def make_gaussian_dataset(n: int, D: int, L: int, separation: float, seed: int) -> NoisyDataset:
    """Balanced isotropic unit-variance clusters around simplex vertices."""
    if n < L:
        raise ContractError(f"need n >= L, got n={n}, L={L}")
    if D < 2:
        raise ContractError(f"need D >= 2, got {D}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % L)
    X = class_means(D, L, separation)[labels] + rng.standard_normal((n, D))
    return NoisyDataset(X, labels, labels.copy(), L, NoiseSpec(), seed)


def nearest_mean_accuracy(ds: NoisyDataset, separation: float) -> float:
    """Accuracy of the generating-means classifier (the Bayes rule) on clean labels."""
    M = class_means(ds.dim, ds.num_classes, separation)
    d2 = ((ds.features[:, None, :] - M[None]) ** 2).sum(-1)
    return float(np.mean(d2.argmin(axis=1) == ds.clean_labels))


def inject_symmetric(ds: NoisyDataset, epsilon: float, seed: int, include_self: bool = False) -> NoisyDataset:
    """Flip each label with probability ``epsilon`` to a uniformly drawn other class.

    With ``include_self`` the replacement is drawn from all classes, so the
    observed corruption rate is ``epsilon * (L - 1) / L``.
    """
    _check_rate(epsilon)
    rng = np.random.default_rng(seed)
    L = ds.num_classes
    y = ds.clean_labels
    flip = rng.random(ds.n) < epsilon
    if include_self:
        new = rng.integers(0, L, size=ds.n)
    else:
        new = (y + rng.integers(1, L, size=ds.n)) % L
    noisy = np.where(flip, new, y)
    return replace(ds, noisy_labels=noisy, noise_spec=NoiseSpec("sym", epsilon, seed))


def cyclic_superclass_mapping(num_classes: int, group_size: int) -> dict[int, int]:
    """Map each class to the next one inside consecutive groups of ``group_size``."""
    if num_classes % group_size:
        raise ContractError("num_classes must be a multiple of group_size")
    mapping = {}
    for start in range(0, num_classes, group_size):
        for k in range(group_size):
            mapping[start + k] = start + (k + 1) % group_size
    return mapping


def inject_asymmetric(ds: NoisyDataset, epsilon: float, mapping: dict[int, int], seed: int) -> NoisyDataset:
    """Flip instances of mapped classes to their target with probability ``epsilon``."""
    _check_rate(epsilon)
    for src, dst in mapping.items():
        if src == dst:
            raise ContractError(f"mapping sends class {src} to itself")
        if not (0 <= src < ds.num_classes and 0 <= dst < ds.num_classes):
            raise ContractError(f"mapping {src}->{dst} outside [0, {ds.num_classes})")
    rng = np.random.default_rng(seed)
    y = ds.clean_labels
    target = y.copy()
    for src, dst in mapping.items():
        target[y == src] = dst
    flip = (rng.random(ds.n) < epsilon) & (target != y)
    noisy = np.where(flip, target, y)
    return replace(ds, noisy_labels=noisy, noise_spec=NoiseSpec("asym", epsilon, seed, dict(mapping)))


def truncated_normal_rates(epsilon: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draws from N(epsilon, 0.1^2) restricted to [0, 1], by rejection."""
    out = np.empty(size)
    filled = 0
    while filled < size:
        draw = rng.normal(epsilon, INSTANCE_RATE_STD, size=2 * (size - filled) + 16)
        draw = draw[(draw >= 0.0) & (draw <= 1.0)]
        take = min(len(draw), size - filled)
        out[filled : filled + take] = draw[:take]
        filled += take
    return out


def truncated_normal_mean(epsilon: float) -> float:
    a, b = (0.0 - epsilon) / INSTANCE_RATE_STD, (1.0 - epsilon) / INSTANCE_RATE_STD
    return float(truncnorm.mean(a, b, loc=epsilon, scale=INSTANCE_RATE_STD))


def truncated_normal_std(epsilon: float) -> float:
    a, b = (0.0 - epsilon) / INSTANCE_RATE_STD, (1.0 - epsilon) / INSTANCE_RATE_STD
    return float(truncnorm.std(a, b, loc=epsilon, scale=INSTANCE_RATE_STD))


def inject_instance_dependent(ds: NoisyDataset, epsilon: float, seed: int, return_rates: bool = False):
    """Per-instance flip rates and feature-driven flip targets.

    Each instance gets a rate ``rho_i`` from the truncated normal around
    ``epsilon``; a standard normal projection ``W`` (D x L) scores the
    classes, and a flipped label is drawn from the softmax of the scores with
    the true class excluded.
    """
    _check_rate(epsilon)
    rng = np.random.default_rng(seed)
    n, L = ds.n, ds.num_classes
    rho = truncated_normal_rates(epsilon, n, rng)
    W = rng.standard_normal((ds.dim, L))
    scores = ds.features @ W
    y = ds.clean_labels
    scores[np.arange(n), y] = -np.inf
    probs = _softmax(scores, axis=1)
    flip = rng.random(n) < rho
    u = rng.random(n)
    cdf = np.cumsum(probs, axis=1)
    targets = np.minimum((u[:, None] > cdf).sum(axis=1), L - 1)
    # guard against rounding landing on the excluded class
    targets = np.where(targets == y, (y + 1) % L, targets)
    noisy = np.where(flip, targets, y)
    out = replace(ds, noisy_labels=noisy, noise_spec=NoiseSpec("idn", epsilon, seed))
    return (out, rho) if return_rates else out


NOISE_KINDS = ("none", "sym", "asym", "idn")


def generate(n: int, D: int, L: int, separation: float, kind: str, epsilon: float, seed: int) -> NoisyDataset:
    """Gaussian features from ``seed``, label noise from ``seed + 1``.

    The recorded noise seed is ``seed`` itself, so a saved file's header
    reproduces the whole dataset through this function.
    """
    _check_rate(epsilon)
    ds = inject(make_gaussian_dataset(n, D, L, separation, seed), kind, epsilon, seed + 1)
    return replace(ds, noise_spec=NoiseSpec(kind, epsilon, seed))


def inject(ds: NoisyDataset, kind: str, epsilon: float, seed: int, mapping=None) -> NoisyDataset:
    if kind == "none":
        _check_rate(epsilon)
        return ds
    if kind == "sym":
        return inject_symmetric(ds, epsilon, seed)
    if kind == "asym":
        return inject_asymmetric(ds, epsilon, mapping if mapping is not None else default_mapping(ds.num_classes), seed)
    if kind == "idn":
        return inject_instance_dependent(ds, epsilon, seed)
    raise ContractError(f"unknown noise kind {kind!r}")


def default_mapping(num_classes: int) -> dict[int, int]:
    if num_classes == 10:
        return dict(CIFAR10_MAPPING)
    return {k: (k + 1) % num_classes for k in range(num_classes)}


def _check_rate(epsilon: float) -> None:
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError(f"noise rate must lie in [0, 1], got {epsilon}")


# -- file format ----------------------------------------------------------
# header: "D L n kind epsilon seed", then n CSV rows feat_0..feat_{D-1},clean,noisy

def dumps(ds: NoisyDataset) -> str:
    spec = ds.noise_spec
    buf = io.StringIO()
    buf.write(f"{ds.dim} {ds.num_classes} {ds.n} {spec.kind} {spec.rate!r} {spec.seed}\n")
    for x, c, y in zip(ds.features, ds.clean_labels, ds.noisy_labels):
        buf.write(",".join(repr(float(v)) for v in x))
        buf.write(f",{int(c)},{int(y)}\n")
    return buf.getvalue()


def save(ds: NoisyDataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(ds))


def load(path) -> NoisyDataset:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 6:
            raise ContractError(f"{path}: header must have 6 fields, got {len(header)}")
        D, L, n = (int(v) for v in header[:3])
        kind, eps, seed = header[3], float(header[4]), int(header[5])
        rows = np.loadtxt(fh, delimiter=",", ndmin=2) if n else np.zeros((0, D + 2))
    if rows.shape != (n, D + 2):
        raise ContractError(f"{path}: expected {n} rows of {D + 2} fields, got {rows.shape}")
    labels = rows[:, D:]
    if not np.all(labels == np.round(labels)):
        raise ContractError(f"{path}: labels must be integers")
    return NoisyDataset(rows[:, :D], labels[:, 0].astype(np.int64), labels[:, 1].astype(np.int64), L,
                        NoiseSpec(kind, eps, seed), seed)
