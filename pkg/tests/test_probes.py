import csv
import itertools

import numpy as np
import pytest
from scipy.stats import ttest_ind

from alasca.network import MultiExitNet, NetSpec
from alasca.noise import inject_symmetric, make_gaussian_dataset
from alasca.probes import (
    CSV_COLUMNS,
    confidence_dynamics,
    export_csv,
    group_jacobian_gap,
    probe_indices,
    selection_fscore,
)
from alasca.tensor import softmax
from alasca.theory import jacobian_frobenius
from alasca.trainer import EmaState


def brute_f1(sel, clean):
    tp = fp = fn = 0
    for s, c in zip(sel, clean):
        if s and c:
            tp += 1
        elif s:
            fp += 1
        elif c:
            fn += 1
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def test_fscore_endpoints():
    clean = np.array([1, 0, 1, 1, 0], dtype=bool)
    assert selection_fscore(clean, clean) == 1.0
    assert selection_fscore(~clean, clean) == 0.0


def test_fscore_degenerate_flags():
    r = selection_fscore(np.zeros(4, bool), np.ones(4, bool), detail=True)
    assert r.value == 0.0 and r.degenerate
    r = selection_fscore(np.ones(4, bool), np.zeros(4, bool), detail=True)
    assert r.value == 0.0 and r.degenerate
    assert not selection_fscore([True, False], [True, True], detail=True).degenerate


def test_fscore_shape_mismatch():
    with pytest.raises(ValueError):
        selection_fscore([True], [True, False])


def test_fscore_exhaustive_short_masks():
    for n in range(1, 8):
        for bits in itertools.product((False, True), repeat=2 * n):
            sel, clean = bits[:n], bits[n:]
            assert selection_fscore(sel, clean) == pytest.approx(brute_f1(sel, clean), abs=1e-15)


def test_fscore_every_confusion_class_up_to_twelve():
    # the score is permutation invariant, so one mask per cell-count composition
    # covers every input of that length
    for n in range(8, 13):
        for tp in range(n + 1):
            for fp in range(n + 1 - tp):
                for fn in range(n + 1 - tp - fp):
                    tn = n - tp - fp - fn
                    sel = [True] * tp + [True] * fp + [False] * fn + [False] * tn
                    clean = [True] * tp + [False] * fp + [True] * fn + [False] * tn
                    assert selection_fscore(sel, clean) == pytest.approx(brute_f1(sel, clean), abs=1e-15)


def test_random_half_selection_expected_fscore():
    rng = np.random.default_rng(0)
    n, reps = 5000, 200
    vals = []
    for _ in range(reps):
        clean = rng.random(n) < 0.4
        sel = rng.random(n) < 0.5
        vals.append(selection_fscore(sel, clean))
    vals = np.array(vals)
    expected = 2 * 0.4 * 0.5 / (0.4 + 0.5)
    assert abs(vals.mean() - expected) <= 3 * vals.std(ddof=1) / np.sqrt(reps) + 1e-4


# -- confidence dynamics --------------------------------------------------------

def run_stream(stream, L=3, tau=3.0, y=0):
    ema = EmaState(1, L, tau=tau)
    g, inst = [], []
    for z in stream:
        ema.update([0], z[None])
        g.append(ema.confidence([0], [y])[0])
        inst.append(softmax(z, tau)[y])
    return np.array(g)[:, None], np.array(inst)[:, None]


def test_constant_stream_has_zero_instantaneous_spread():
    v = np.array([1.0, -0.5, 0.2])
    g, inst = run_stream([v] * 40)
    rep = confidence_dynamics(g[20:], inst[20:])
    assert rep.mean_inst_std < 1e-12
    assert rep.mean_ema_std < 1e-3
    # identical histories in both slots: both spreads exactly zero
    flat = confidence_dynamics(np.full((5, 3), 0.4), np.full((5, 3), 0.4))
    assert flat.mean_ema_std == 0 and flat.mean_inst_std == 0


def test_alternating_stream_is_damped():
    v = np.array([1.0, -1.0, 0.0])
    g, inst = run_stream([v if k % 2 == 0 else -v for k in range(60)])
    rep = confidence_dynamics(g, inst)
    assert rep.mean_ema_std < rep.mean_inst_std
    assert rep.ema_more_stable


def test_dynamics_groups_and_contracts():
    rng = np.random.default_rng(1)
    e, i = rng.random((6, 10)), rng.random((6, 10))
    clean = np.arange(10) < 7
    rep = confidence_dynamics(e, i, clean)
    assert set(rep.ema_mean_traj) == {"all", "clean", "noisy"}
    np.testing.assert_allclose(rep.ema_mean_traj["clean"], e[:, :7].mean(1))
    with pytest.raises(ValueError):
        confidence_dynamics(e[:1], i[:1])
    with pytest.raises(ValueError):
        confidence_dynamics(e, i[:, :5])


# -- Jacobian gap ---------------------------------------------------------------

@pytest.fixture(scope="module")
def noisy_ds():
    return inject_symmetric(make_gaussian_dataset(600, 8, 4, 3.0, 5), 0.4, 6)


def test_untrained_net_groups_are_indistinguishable(noisy_ds):
    net = MultiExitNet(NetSpec(8, 4, width=32, stages=2), seed=0)
    mc, mn, norms, clean = group_jacobian_gap(net, noisy_ds, "stage2", seed=0, return_norms=True)
    assert np.isfinite(mc) and np.isfinite(mn)
    assert ttest_ind(norms[clean], norms[~clean]).pvalue > 0.01


def test_single_norm_matches_finite_differences(noisy_ds):
    net = MultiExitNet(NetSpec(8, 4, width=16, stages=2, activation="softplus"), seed=1)
    _, _, norms, _ = group_jacobian_gap(net, noisy_ds, "stage2", size=20, seed=3, return_norms=True)
    idx = probe_indices(noisy_ds.n, 20, 3)
    fd = jacobian_frobenius(net, noisy_ds.features[idx[:1]], "stage2", mode="fd")
    assert abs(fd[0] - norms[0]) / norms[0] < 1e-3


def test_probe_subsample_is_seeded_and_bounded():
    a, b = probe_indices(5000, 512, 7), probe_indices(5000, 512, 7)
    assert np.array_equal(a, b) and len(a) == 512 and len(np.unique(a)) == 512
    assert np.array_equal(probe_indices(100, 512, 0), np.arange(100))


def test_empty_group_is_nan():
    ds = make_gaussian_dataset(40, 4, 2, 2.0, 0)
    net = MultiExitNet(NetSpec(4, 2, width=8, stages=1), seed=0)
    mc, mn = group_jacobian_gap(net, ds, "stage1", size=None)
    assert np.isfinite(mc) and np.isnan(mn)


def test_probe_is_read_only(noisy_ds):
    net = MultiExitNet(NetSpec(8, 4, width=8, stages=2), seed=2)
    before = {k: v.copy() for k, v in net.state_dict().items()}
    group_jacobian_gap(net, noisy_ds, "stage1", size=16)
    for k, v in net.state_dict().items():
        assert np.array_equal(before[k], v)


# -- CSV ---------------------------------------------------------------------------

def test_csv_export(tmp_path):
    recs = [
        {"epoch": 0, "split": "train", "accuracy": 0.5, "jac_clean": None, "extra": 1},
        {"epoch": 0, "split": "test", "accuracy": 0.25},
    ]
    path = tmp_path / "m.csv"
    export_csv(recs, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == CSV_COLUMNS
    assert rows[0]["accuracy"] == "0.5" and rows[0]["jac_clean"] == ""
    assert rows[1]["split"] == "test"
