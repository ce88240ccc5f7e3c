"""Numerical certificates for the logit regularizer under a linear classifier.

With features ``z`` and a fixed classifier ``W`` (Q x L), the regularizer
becomes ``phi(z) = omega(W^T z)``.  This module evaluates phi, its gradient
and Hessian in closed form, certifies convexity and the uniqueness of the
minimizer at ``z = 0``, checks the square-loss smoothing identity for binary
labels, and measures input-output Jacobians of a trained network.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

from .errors import ContractError
from .network import MultiExitNet
from .tensor import Tensor, check_finite

RANK_RTOL = 1e-10
PSD_TOL = 1e-8


@dataclass
class ClassifierWeights:
    W: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[1] < 2:
            raise ContractError(f"W must be Q x L with L >= 2, got {self.W.shape}")

    @property
    def Q(self) -> int:
        return self.W.shape[0]

    @property
    def L(self) -> int:
        return self.W.shape[1]

    def differences(self) -> np.ndarray:
        """Columns ``W_i - W_1`` for i = 2..L, stacked as a Q x (L-1) matrix."""
        return self.W[:, 1:] - self.W[:, :1]

    def difference_rank(self) -> int:
        s = np.linalg.svd(self.differences(), compute_uv=False)
        if s.size == 0 or s[0] == 0.0:
            return 0
        return int(np.sum(s > RANK_RTOL * s[0]))

    @property
    def affine_basis_ok(self) -> bool:
        # rank Q of the differences is what uniqueness needs; a strict affine
        # basis additionally has L = Q + 1
        return self.difference_rank() == self.Q

    @property
    def strict_affine_basis(self) -> bool:
        return self.affine_basis_ok and self.L == self.Q + 1


def _as_weights(W) -> ClassifierWeights:
    return W if isinstance(W, ClassifierWeights) else ClassifierWeights(W)


def phi(W, z) -> float:
    W = _as_weights(W).W
    s = W.T @ check_finite(z, "z")
    return float(W.shape[1] * logsumexp(s) - s.sum())


def phi_excess(W, z) -> float:
    """``phi(z) - phi(0)`` without forming the large common term."""
    W = _as_weights(W).W
    L = W.shape[1]
    s = W.T @ check_finite(z, "z")
    return float(L * (logsumexp(s) - np.log(L)) - s.sum())


def _probs(W: np.ndarray, z: np.ndarray) -> np.ndarray:
    s = W.T @ check_finite(z, "z")
    e = np.exp(s - s.max())
    return e / e.sum()


def phi_gradient(W, z) -> np.ndarray:
    """``L * W softmax(W^T z) - W 1``."""
    W = _as_weights(W).W
    p = _probs(W, np.asarray(z, dtype=np.float64))
    return W.shape[1] * (W @ p) - W.sum(axis=1)


def phi_hessian(W, z) -> np.ndarray:
    """``L * (W diag(p) W^T - (W p)(W p)^T)``, symmetric PSD."""
    W = _as_weights(W).W
    p = _probs(W, np.asarray(z, dtype=np.float64))
    m = W @ p
    H = W.shape[1] * ((W * p) @ W.T - np.outer(m, m))
    return 0.5 * (H + H.T)


def psd_margin(H: np.ndarray) -> tuple[float, float]:
    """(min eigenvalue, allowed negative slack ``PSD_TOL * max(1, lambda_max)``)."""
    eig = np.linalg.eigvalsh(H)
    return float(eig[0]), PSD_TOL * max(1.0, float(eig[-1]))


@dataclass
class MinimizerReport:
    unique_expected: bool
    difference_rank: int
    trials: int
    min_excess: float = np.inf  # min over samples of phi(z) - phi(0)
    grad_norm_at_zero: float = 0.0
    null_solution_only: bool = False  # stacked difference system has only z = 0
    witness: np.ndarray | None = None
    witness_excess: float | None = None

    @property
    def passed(self) -> bool:
        if self.grad_norm_at_zero >= 1e-12:
            return False
        if self.unique_expected:
            return self.min_excess > 0.0 and self.null_solution_only
        return self.witness is not None and abs(self.witness_excess) < 1e-10


def unique_minimizer_check(W, trials: int, seed: int = 0, radius=(1e-3, 3.0)) -> MinimizerReport:
    """Sampled certificate that ``z = 0`` is the unique minimizer of phi.

    The gradient vanishes iff ``<W_i - W_1, z> = 0`` for all i, so uniqueness
    reduces to the difference matrix having full column rank.  When it does
    not, a null-space direction is returned as a witness along which phi is
    flat.
    """
    cw = _as_weights(W)
    rng = np.random.default_rng(seed)
    rank = cw.difference_rank()
    rep = MinimizerReport(cw.affine_basis_ok, rank, trials)
    rep.grad_norm_at_zero = float(np.abs(phi_gradient(cw, np.zeros(cw.Q))).max())
    if cw.affine_basis_ok:
        # D^T z = 0 has only the trivial solution
        D = cw.differences().T
        rep.null_solution_only = np.linalg.matrix_rank(D, tol=RANK_RTOL * np.linalg.norm(D, 2)) == cw.Q
        lo, hi = np.log(radius[0]), np.log(radius[1])
        worst = np.inf
        for _ in range(trials):
            d = rng.standard_normal(cw.Q)
            z = d / np.linalg.norm(d) * np.exp(rng.uniform(lo, hi))
            worst = min(worst, phi_excess(cw, z))
        rep.min_excess = worst
    else:
        _, s, vt = np.linalg.svd(cw.differences().T)
        rank_tol = RANK_RTOL * (s[0] if s.size and s[0] > 0 else 1.0)
        k = int(np.sum(s > rank_tol))
        z = vt[k] if k < vt.shape[0] else vt[-1]
        z = z / np.linalg.norm(z)
        rep.witness = z
        rep.witness_excess = phi_excess(cw, z)
    return rep


# -- binary square loss with smoothed labels -------------------------------

def mse_ls_constant(f, y: float, alpha: float) -> np.ndarray:
    """``c(f)`` in ``(f - (1-a) y)^2 = (1-a)^2 (f - y)^2 + a(2-a)(f - (1-a) y / (2-a))^2 + c``."""
    f = np.asarray(f, dtype=np.float64)
    ybar = (1.0 - alpha) * y
    return (f - ybar) ** 2 - (1.0 - alpha) ** 2 * (f - y) ** 2 - alpha * (2.0 - alpha) * (f - ybar / (2.0 - alpha)) ** 2


@dataclass
class MseReport:
    alpha: float
    y: float
    spread: float
    constant: float
    closed_form: float

    @property
    def passed(self) -> bool:
        return self.spread < 1e-10 and abs(self.constant - self.closed_form) < 1e-10


def mse_ls_decomposition_check(f_vals, y: float, alpha: float) -> MseReport:
    if y not in (-1, 1):
        raise ContractError(f"binary label must be +1 or -1, got {y}")
    if not 0.0 <= alpha < 1.0:
        raise ContractError(f"alpha must lie in [0, 1), got {alpha}")
    c = mse_ls_constant(f_vals, y, alpha)
    closed = -alpha * (1.0 - alpha) ** 2 / (2.0 - alpha)
    return MseReport(alpha, y, float(c.max() - c.min()), float(c.mean()), closed)


# -- Jacobian probes --------------------------------------------------------

def jacobian_of(fn, x) -> np.ndarray:
    """Per-row Jacobian of a row-wise map ``fn: Tensor -> Tensor``, shape (n, out, D).

    One backward pass per output coordinate; the seed is pushed through all
    rows at once because rows do not interact in the forward pass.
    """
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    xt = Tensor(X.copy(), requires_grad=True)
    out = fn(xt)
    n, m = out.shape
    J = np.empty((n, m, X.shape[1]))
    for k in range(m):
        seed = np.zeros((n, m))
        seed[:, k] = 1.0
        xt.zero_grad()
        out.backward(seed, retain_graph=k < m - 1)
        J[:, k, :] = xt.grad
    return J


def jacobian(net: MultiExitNet, x, layer: str) -> np.ndarray:
    """Input Jacobian of a named layer output of ``net`` for each row of ``x``."""
    if layer not in net.layer_ids():
        raise ContractError(f"unknown layer {layer!r}; choose from {net.layer_ids()}")
    with net.frozen():
        return jacobian_of(lambda t: net.trace(t)[layer], x)


def jacobian_fd(net: MultiExitNet, x, layer: str, step: float = 1e-5) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, D = X.shape
    with net.frozen():
        cols = []
        for d in range(D):
            Xp, Xm = X.copy(), X.copy()
            Xp[:, d] += step
            Xm[:, d] -= step
            up = net.trace(Xp)[layer].data
            down = net.trace(Xm)[layer].data
            cols.append((up - down) / (2.0 * step))
    return np.stack(cols, axis=-1)


def jacobian_frobenius(net: MultiExitNet, x, layer: str, mode: str = "autodiff") -> np.ndarray:
    """Frobenius norm of the input Jacobian of ``layer`` for each row of ``x``."""
    if mode == "autodiff":
        J = jacobian(net, x, layer)
    elif mode == "fd":
        J = jacobian_fd(net, x, layer)
    else:
        raise ContractError(f"unknown jacobian mode {mode!r}")
    return np.sqrt((J**2).sum(axis=(1, 2)))


def aggregate_R(net: MultiExitNet, x, layers: Iterable[str] | None = None) -> np.ndarray:
    """``sqrt(sum_j ||J_j||_F^2)`` over the given layers (all stages by default)."""
    layers = list(layers) if layers is not None else [f"stage{k}" for k in range(1, net.C)]
    return combine_norms([jacobian_frobenius(net, x, name) for name in layers])


def combine_norms(norms) -> np.ndarray:
    """Root of the summed squares of per-layer norms."""
    return np.sqrt(sum(np.asarray(v, dtype=np.float64) ** 2 for v in norms))


@dataclass
class LipschitzProbe:
    layer: str
    norms: np.ndarray
    R: np.ndarray
    gradient_lipschitz: float


def estimate_gradient_lipschitz(net: MultiExitNet, X: np.ndarray, layer: str, pairs: int = 64, seed: int = 0) -> float:
    """Largest ``||J(x) - J(x')||_F / ||x - x'||`` over sampled nearby pairs."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(X), size=pairs)
    A = X[idx]
    B = A + 0.1 * rng.standard_normal(A.shape)
    JA, JB = jacobian(net, A, layer), jacobian(net, B, layer)
    num = np.sqrt(((JA - JB) ** 2).sum(axis=(1, 2)))
    den = np.linalg.norm(A - B, axis=1)
    return float((num / den).max())


def lipschitz_probe(net: MultiExitNet, X: np.ndarray, layer: str, seed: int = 0) -> LipschitzProbe:
    return LipschitzProbe(
        layer,
        jacobian_frobenius(net, X, layer),
        aggregate_R(net, X),
        estimate_gradient_lipschitz(net, X, layer, seed=seed),
    )


def shrinkage_trend(nets: dict[float, MultiExitNet], X: np.ndarray, is_clean: np.ndarray, layer: str) -> dict[float, dict[str, float]]:
    """Mean Jacobian norm per smoothing factor, split by clean/noisy groups."""
    is_clean = np.asarray(is_clean, dtype=bool)
    out = {}
    for alpha, net in sorted(nets.items()):
        norms = jacobian_frobenius(net, X, layer)
        out[alpha] = {
            "pooled": float(norms.mean()),
            "clean": float(norms[is_clean].mean()) if is_clean.any() else float("nan"),
            "noisy": float(norms[~is_clean].mean()) if (~is_clean).any() else float("nan"),
        }
    return out


# -- report -----------------------------------------------------------------

@dataclass
class CheckRecord:
    name: str
    inputs: dict
    statistic: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        digest = hashlib.sha256(json.dumps(self.inputs, sort_keys=True).encode()).hexdigest()[:16]
        rec = {
            "name": self.name,
            "inputs_digest": digest,
            "inputs": self.inputs,
            "statistic": self.statistic,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }
        rec.update(self.detail)
        return json.dumps(rec, sort_keys=True)


def _random_W(rng, Q, L):
    return rng.standard_normal((Q, L))


def run_theory_suite(trials: int = 1000, seed: int = 0, tolerance: float | None = None,
                     degenerate_W: np.ndarray | None = None) -> list[CheckRecord]:
    """Every closed-form check, one record per check.

    ``tolerance`` overrides the default tolerance of every tight check (used
    to force the failure path).  ``degenerate_W``, if given, replaces the
    built-in rank-deficient classifier in the witness check.
    """
    from .smoothing import ls_decomposition_residual

    rng = np.random.default_rng(seed)
    tol = (lambda default: default if tolerance is None else tolerance)
    recs: list[CheckRecord] = []

    # gradient vanishes at the origin
    worst = 0.0
    for Q in range(2, 9):
        for _ in range(10):
            worst = max(worst, float(np.abs(phi_gradient(_random_W(rng, Q, Q + 1), np.zeros(Q))).max()))
    t = tol(1e-12)
    recs.append(CheckRecord("phi_gradient_zero", {"Q": [2, 8], "draws": 70, "seed": seed}, worst, t, worst < t))

    # convexity: Hessian PSD and symmetric
    worst_ratio, worst_sym = -np.inf, 0.0
    for k in range(100):
        Q = 2 + k % 7
        W = _random_W(rng, Q, Q + 1)
        z = rng.standard_normal(Q) * rng.uniform(0.1, 5.0)
        H = phi_hessian(W, z)
        lo, slack = psd_margin(H)
        worst_ratio = max(worst_ratio, -lo / slack)
        worst_sym = max(worst_sym, float(np.abs(H - H.T).max()))
    t = 1.0 if tolerance is None else tolerance
    recs.append(CheckRecord("phi_hessian_psd", {"draws": 100, "seed": seed, "rel_slack": PSD_TOL},
                            worst_ratio, t, worst_ratio <= t and worst_sym < 1e-12,
                            {"max_asymmetry": worst_sym}))

    # unique minimizer over random full-rank classifiers
    min_excess, all_full = np.inf, True
    for k in range(7):
        Q = 2 + k
        rep = unique_minimizer_check(_random_W(rng, Q, Q + 1), trials, seed=seed + k)
        all_full &= rep.unique_expected and rep.null_solution_only
        min_excess = min(min_excess, rep.min_excess)
    # excess must be strictly positive; the tolerance acts as a margin
    t = 0.0 if tolerance is None else tolerance
    recs.append(CheckRecord("phi_unique_minimizer", {"Q": [2, 8], "trials": trials, "seed": seed},
                            min_excess, t, all_full and min_excess > t))

    # rank-deficient classifier: flat direction exists
    Wd = degenerate_W if degenerate_W is not None else np.array([[1.0, 1.0, 0.0, 2.0], [0.5, 0.5, 1.0, -1.0], [0.0, 0.0, 0.0, 0.0]])
    rep = unique_minimizer_check(Wd, trials, seed=seed)
    stat = abs(rep.witness_excess) if rep.witness is not None else np.inf
    t = tol(1e-10)
    recs.append(CheckRecord("phi_degenerate_witness", {"W": np.asarray(Wd).tolist()}, stat, t,
                            (not rep.unique_expected) and stat < t,
                            {"witness": None if rep.witness is None else rep.witness.tolist(),
                             "difference_rank": rep.difference_rank}))

    # smoothed cross entropy splits into CE + omega
    worst = 0.0
    for _ in range(1000):
        L = int(rng.integers(2, 11))
        f = rng.standard_normal(L) * rng.uniform(0.1, 10.0)
        worst = max(worst, abs(ls_decomposition_residual(f, int(rng.integers(L)), float(rng.uniform(0.01, 0.99)))))
    t = tol(1e-10)
    recs.append(CheckRecord("ls_decomposition", {"draws": 1000, "seed": seed}, worst, t, worst < t))

    # binary square loss constant
    grid = np.linspace(-3, 3, 61)
    worst = 0.0
    for alpha in np.linspace(0.0, 0.95, 20):
        for y in (-1, 1):
            r = mse_ls_decomposition_check(grid, y, float(alpha))
            worst = max(worst, r.spread, abs(r.constant - r.closed_form))
    t = tol(1e-10)
    recs.append(CheckRecord("mse_ls_constant", {"alphas": 20, "f_grid": [-3, 3, 61]}, worst, t, worst < t))
    return recs


def write_report(records: list[CheckRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
