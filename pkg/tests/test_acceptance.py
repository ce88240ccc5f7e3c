"""End-to-end acceptance criteria.

Each test reports one line through ``criterion_log``; the lines are repeated
in the pytest terminal summary.  Desk-task training runs are cached per
module, so criteria 5 to 7 share the same ALASCA runs.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import os
import subprocess
import sys
import time

import numpy as np
import pytest
from reference_loops import plain_ce_loop

from alasca.experiments import (
    DeskTask,
    alasca_config,
    plain_config,
    shrinkage_run,
    summarize,
    with_noise,
)
from alasca.functional import cross_entropy, one_hot
from alasca.gradcheck import check_gradients
from alasca.noise import (
    CIFAR10_MAPPING,
    inject_asymmetric,
    inject_instance_dependent,
    inject_symmetric,
    make_gaussian_dataset,
    truncated_normal_mean,
    truncated_normal_std,
)
from alasca.smoothing import als_loss, ls_decomposition_residual, omega
from alasca.tensor import Tensor, softmax
from alasca.theory import mse_ls_decomposition_check, run_theory_suite
from alasca.trainer import TrainConfig, alasca_loss, final_test_accuracy, lnl_loss, train

pytestmark = pytest.mark.acceptance

SEEDS = range(5)
TASK = DeskTask()


# -- 1-3: closed-form checks ---------------------------------------------------

def test_criterion_1_theory_suite(criterion_log):
    t0 = time.perf_counter()
    recs = run_theory_suite(trials=1000, seed=0)
    elapsed = time.perf_counter() - t0
    by_name = {r.name: r for r in recs}
    wanted = ("phi_gradient_zero", "phi_hessian_psd", "phi_unique_minimizer", "phi_degenerate_witness")
    ok = all(by_name[n].passed for n in wanted) and elapsed < 30
    detail = ", ".join(f"{n}={by_name[n].statistic:.2e}" for n in wanted)
    criterion_log(1, "theory suite", ok, f"{detail}; {elapsed:.1f}s (< 30s)")
    assert ok


def test_criterion_2_decomposition_identities(criterion_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_ls = 0.0
    for _ in range(1000):
        L = int(rng.integers(2, 11))
        f = rng.standard_normal(L) * rng.uniform(0.1, 10.0)
        alpha = float(rng.uniform(0.01, 0.99))
        worst_ls = max(worst_ls, abs(ls_decomposition_residual(f, int(rng.integers(L)), alpha)))
    worst_mse = 0.0
    grid = np.linspace(-3.0, 3.0, 61)
    for alpha in np.linspace(0.0, 0.95, 20):
        for y in (-1, 1):
            worst_mse = max(worst_mse, mse_ls_decomposition_check(grid, y, float(alpha)).spread)
    elapsed = time.perf_counter() - t0
    ok = worst_ls < 1e-10 and worst_mse < 1e-10 and elapsed < 5
    criterion_log(2, "decomposition identities", ok,
                  f"LS residual {worst_ls:.2e}, MSE constant spread {worst_mse:.2e}; {elapsed:.2f}s (< 5s)")
    assert ok


def _random_batch(rng):
    n, L = int(rng.integers(1, 5)), int(rng.integers(2, 9))
    return rng.standard_normal((n, L)) * rng.uniform(0.3, 4.0), rng.integers(0, L, n), L


def _gradcheck_cases():
    def ce(rng):
        f, y, L = _random_batch(rng)
        q = Tensor(f, requires_grad=True)
        return (lambda: cross_entropy(q, one_hot(y, L)).mean()), [q]

    def om(rng):
        f, _, _ = _random_batch(rng)
        q = Tensor(f, requires_grad=True)
        return (lambda: omega(q).sum()), [q]

    def als(rng):
        f, y, L = _random_batch(rng)
        q = Tensor(f, requires_grad=True)
        beta = (softmax(f) * one_hot(y, L)).sum(axis=-1)  # detached, frozen at the base point
        return (lambda: als_loss(q, y, beta=beta).mean()), [q]

    def gce(rng):
        f, y, _ = _random_batch(rng)
        q = Tensor(f, requires_grad=True)
        cfg = TrainConfig(gce_q=float(rng.uniform(0.1, 1.0)))
        return (lambda: lnl_loss("gce", q, y, cfg)), [q]

    def sce(rng):
        f, y, _ = _random_batch(rng)
        q = Tensor(f, requires_grad=True)
        return (lambda: lnl_loss("sce", q, y)), [q]

    def alasca(rng):
        f, y, L = _random_batch(rng)
        heads = [Tensor(f + rng.standard_normal(f.shape), requires_grad=True) for _ in range(int(rng.integers(2, 5)))]
        y_hat = rng.integers(0, L, len(y))
        gamma = rng.uniform(0.05, 0.95, len(y))
        cfg = TrainConfig(lnl_loss=str(rng.choice(["ce", "gce", "sce"])))
        return (lambda: alasca_loss(heads, y, y_hat, gamma, cfg)), heads

    return {"CE": ce, "Omega": om, "ALS": als, "GCE": gce, "SCE": sce, "alasca_loss": alasca}


def test_criterion_3_gradient_integrity(criterion_log):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = {}
    for name, make in _gradcheck_cases().items():
        worst[name] = max(check_gradients(*make(rng)) for _ in range(50))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion_log(3, "finite-difference gradients (50 instances each)", ok, f"{detail}; {elapsed:.1f}s (< 60s)")
    assert ok


# -- 4-7: desk task ----------------------------------------------------------------

@pytest.fixture(scope="module")
def shrinkage():
    t0 = time.perf_counter()
    runs = {s: shrinkage_run(TASK, s) for s in SEEDS}
    return runs, time.perf_counter() - t0


def _pair(task, seed):
    train_ds, test_ds = task.datasets(seed)
    al = train(alasca_config(seed), train_ds, test_ds)
    ce = train(plain_config(seed), train_ds, test_ds)
    return al, ce, train_ds


@pytest.fixture(scope="module")
def desk():
    out = {}
    for s in SEEDS:
        al, ce, train_ds = _pair(TASK, s)
        row = {"alasca": summarize(al, train_ds), "ce_acc": {0.4: final_test_accuracy(ce)}}
        row["alasca_acc"] = {0.4: row["alasca"]["test_acc"]}
        for eps in (0.0, 0.6):
            a, c, _ = _pair(with_noise(TASK, eps), s)
            row["alasca_acc"][eps] = final_test_accuracy(a)
            row["ce_acc"][eps] = final_test_accuracy(c)
        out[s] = row
    return out


def test_criterion_4_shrinkage_direction(shrinkage, criterion_log):
    runs, elapsed = shrinkage
    hits = 0
    parts = []
    for s, r in runs.items():
        vals = [r[a]["pooled"] for a in (0.0, 0.3, 0.6)]
        hits += vals[0] > vals[1] > vals[2]
        parts.append("/".join(f"{v:.2f}" for v in vals))
    ok = hits >= 4 and elapsed < 600
    criterion_log(4, "Jacobian norm falls with smoothing", ok,
                  f"{hits}/5 seeds strictly decreasing [{'; '.join(parts)}]; {elapsed:.0f}s (< 600s)")
    assert ok


def test_criterion_5_noisy_jacobian_below_clean(desk, criterion_log):
    rows = [desk[s]["alasca"] for s in SEEDS]
    hits = sum(r["jac_noisy"] < r["jac_clean"] for r in rows)
    detail = "; ".join(f"{r['jac_noisy']:.2f}<{r['jac_clean']:.2f}" for r in rows)
    criterion_log(5, "ALASCA noisy-group Jacobian below clean", hits >= 4, f"{hits}/5 seeds [{detail}]")
    assert hits >= 4


def test_criterion_6_confidence_dynamics(desk, criterion_log):
    rows = [desk[s]["alasca"] for s in SEEDS]
    stable = sum(r["ema_std"] <= r["inst_std"] for r in rows)
    gap = sum(r["gamma_clean"] - r["gamma_noisy"] > 0 for r in rows)
    ok = stable == 5 and gap >= 4
    detail = "; ".join(f"std {r['ema_std']:.3f}<={r['inst_std']:.3f}, gap {r['gamma_clean'] - r['gamma_noisy']:+.3f}"
                       for r in rows)
    criterion_log(6, "EMA confidence stability and clean/noisy gap", ok,
                  f"stable {stable}/5, positive gap {gap}/5 [{detail}]")
    assert ok


def test_criterion_7_accuracy_direction(desk, criterion_log):
    gains = {eps: np.mean([desk[s]["alasca_acc"][eps] - desk[s]["ce_acc"][eps] for s in SEEDS])
             for eps in (0.0, 0.4, 0.6)}
    worst_clean = min(desk[s]["alasca_acc"][0.0] - desk[s]["ce_acc"][0.0] for s in SEEDS)
    ok = gains[0.4] >= 0.02 and gains[0.6] >= 0.02 and gains[0.0] >= -0.005
    criterion_log(7, "ALASCA vs plain CE test accuracy", ok,
                  f"mean gain {100 * gains[0.4]:+.2f}pp at 40%, {100 * gains[0.6]:+.2f}pp at 60%, "
                  f"{100 * gains[0.0]:+.2f}pp at 0% (worst single seed {100 * worst_clean:+.2f}pp)")
    assert ok


# -- 8-10 ------------------------------------------------------------------------

def test_criterion_8_reduction_exactness(criterion_log):
    train_ds, _ = TASK.datasets(0)
    cfg = plain_config(0)
    got = train(cfg, train_ds).net.state_dict()
    ref = plain_ce_loop(cfg, train_ds).state_dict()
    same = all(got[k].tobytes() == ref[k].tobytes() for k in ref)
    criterion_log(8, "lambda=0 CE run equals hand-written CE loop", same,
                  f"{len(ref)} tensors {'bit-identical' if same else 'differ'}")
    assert same


def _within(measured, expected, sigma):
    return abs(measured - expected) <= 3 * sigma


def test_criterion_9_noise_statistics(criterion_log):
    n, eps = 10_000, 0.4
    base = make_gaussian_dataset(n, 12, 10, 4.0, seed=9)
    checks = {}
    sym = inject_symmetric(base, eps, seed=1)
    checks["sym"] = (sym.flip_fraction(), eps, np.sqrt(eps * (1 - eps) / n))
    asym = inject_asymmetric(base, eps, CIFAR10_MAPPING, seed=2)
    for src in CIFAR10_MAPPING:
        m = base.clean_labels == src
        checks[f"asym {src}"] = (np.mean(asym.noisy_labels[m] != src), eps, np.sqrt(eps * (1 - eps) / m.sum()))
    _, rho = inject_instance_dependent(base, eps, seed=3, return_rates=True)
    checks["idn rho"] = (rho.mean(), truncated_normal_mean(eps), truncated_normal_std(eps) / np.sqrt(n))
    ok = all(_within(*v) for v in checks.values())
    detail = ", ".join(f"{k} {m:.4f} vs {e:.4f}" for k, (m, e, _) in checks.items())
    criterion_log(9, "noise statistics within 3 sigma", ok, detail)
    assert ok


CLI_CONFIG = """\
data.n = 400
data.dim = 8
data.classes = 4
data.noise = sym
data.eps = 0.4
data.test_n = 200
train.epochs = 6
train.warmup = 2
train.batch_size = 64
net.width = 16
"""


def test_criterion_10_cli_determinism(tmp_path, criterion_log):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(CLI_CONFIG)
    env = {**os.environ, "ALASCA_THREADS": "1"}
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        proc = subprocess.run([sys.executable, "-m", "alasca", "train", "--config", str(cfg), "--out-dir", str(d),
                               "--seed", "7"], env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append(d)
    files = ("metrics.jsonl", "metrics.csv", "checkpoint.bin")
    same = [(outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files]
    ok = all(same)
    criterion_log(10, "CLI reruns byte-identical", ok, ", ".join(f"{f} {'same' if s else 'DIFFERENT'}"
                                                                 for f, s in zip(files, same)))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
