import numpy as np
import pytest
from hypothesis import given, strategies as st

from synthpriv.capture_io import CaptureFile, PacketRecord
from synthpriv.errors import DegenerateLabels, DuplicateSampleId, EmptyTable, RaggedRows
from synthpriv.mia import (
    MEMBER,
    NONMEMBER,
    SignalTable,
    auc,
    load_signals,
    overlap_signal,
    rank_auc,
    roc_curve,
    run_mia,
    save_signals,
    tpr_at_fpr,
    train_attack_model,
    write_roc_csv,
)
from synthpriv.tokens import TokenSequence

from oracles import enumerate_separators, naive_contains, pairwise_auc

M, N = MEMBER, NONMEMBER


def table(signals, labels):
    signals = np.asarray(signals, float).reshape(len(labels), -1)
    return SignalTable([f"s{i}" for i in range(len(labels))], list(labels), signals,
                       [f"x{j}" for j in range(signals.shape[1])])


# signal files


def test_load_signals(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("sample_id,label,a,b\n1,member,0.1,2\n2,nonmember,0.3,4\n3,unknown,1,1\n4,,0,0\n")
    t = load_signals(p)
    assert t.signals.shape == (4, 2) and t.labels[3] == "unknown"


def test_load_signal_errors(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("sample_id,label,a\n1,member,0.1\n1,member,0.2\n")
    with pytest.raises(DuplicateSampleId):
        load_signals(p)
    p.write_text("sample_id,label,a\n1,member,0.1,7\n")
    with pytest.raises(RaggedRows):
        load_signals(p)
    p.write_text("sample_id,label,a\n")
    with pytest.raises(EmptyTable):
        load_signals(p)


def test_signal_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    t = table(rng.normal(size=(6, 3)), [M, N, M, N, "unknown", M])
    assert load_signals(save_signals(t, tmp_path / "t.csv")) == t


# overlap signal


def _cap(header):
    return CaptureFile("x", "x", (PacketRecord(0, len(header), bytes(header)),))


def test_overlap_signal_examples():
    target = _cap(range(40))
    assert overlap_signal(target, [TokenSequence("byte", bytes(range(40)))]) == 1.0
    assert overlap_signal(target, [TokenSequence("byte", bytes([200] * 40))]) == 0.0


def test_overlap_signal_naive():
    rng = np.random.default_rng(6)
    tgt = bytes(rng.integers(0, 3, 60).tolist())
    gen = [bytes(rng.integers(0, 3, 50).tolist()) for _ in range(4)]
    n = 6
    expected = sum(naive_contains(gen, tgt[i : i + n]) for i in range(len(tgt) - n + 1)) / (len(tgt) - n + 1)
    assert overlap_signal(_cap(tgt), [TokenSequence("byte", g) for g in gen], n=n) == pytest.approx(expected)


# ROC statistics


def test_four_sample_curve():
    curve = roc_curve([0.9, 0.8, 0.3, 0.1], [M, M, N, N])
    assert curve.points == [(0, 0), (0, 0.5), (0, 1), (0.5, 1), (1, 1)]
    assert auc(curve) == 1.0
    assert tpr_at_fpr(curve, 0.0) == 1.0 and tpr_at_fpr(curve, 0.01) == 1.0


def test_ties_cross_together():
    curve = roc_curve([0.5, 0.5, 0.5, 0.5], [M, N, M, N])
    assert curve.points == [(0, 0), (1, 1)]
    assert auc(curve) == 0.5


def test_degenerate_labels():
    with pytest.raises(DegenerateLabels):
        roc_curve([1, 2], [M, M])


def test_tpr_at_one_percent_fpr():
    # 88 members score above every non-member, one non-member above the other 12 members
    scores = [100.0 + i for i in range(88)] + [50.0] + [10.0 + i for i in range(12)] + [float(i) for i in range(99)]
    labels = [M] * 88 + [N] + [M] * 12 + [N] * 99
    curve = roc_curve(scores, labels)
    assert tpr_at_fpr(curve, 0.01) == pytest.approx(0.88)
    assert tpr_at_fpr(curve, 0.0) == pytest.approx(0.88)


def test_only_origin_below_cap():
    curve = roc_curve([0.1, 0.9, 0.8], [M, N, N])
    assert tpr_at_fpr(curve, 0.01) == 0.0


def test_shuffled_labels_auc_half():
    rng = np.random.default_rng(12)
    scores = rng.random(10_000)
    labels = rng.permutation([M] * 5000 + [N] * 5000)
    assert abs(auc(roc_curve(scores, labels)) - 0.5) <= 0.02


@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=60))
def test_trapezoid_equals_rank_statistic(rows):
    scores = [s for s, _ in rows]
    is_m = [m for _, m in rows]
    if all(is_m) or not any(is_m):
        return
    curve = roc_curve(scores, is_m)
    a = auc(curve)
    assert a == pytest.approx(pairwise_auc(scores, is_m), abs=1e-12)
    assert a == pytest.approx(rank_auc(scores, is_m), abs=1e-12)
    inverted = auc(roc_curve(scores, [not m for m in is_m]))
    assert inverted == pytest.approx(1 - a, abs=1e-12)
    caps = [0.0, 0.1, 0.3, 0.7, 1.0]
    tprs = [tpr_at_fpr(curve, c) for c in caps]
    assert tprs == sorted(tprs)
    assert np.all(np.diff(curve.fpr) >= 0) and np.all(np.diff(curve.tpr) >= 0)
    assert curve.points[0] == (0, 0) and curve.points[-1] == (1, 1)


# attack models


def test_threshold_separable_and_flat():
    model = train_attack_model(table([0.9] * 5 + [0.1] * 5, [M] * 5 + [N] * 5))
    assert model.training_auc == 1.0 and model.parameters["direction"] == "greater_is_member"
    flat = train_attack_model(table([0.4] * 6, [M, N] * 3))
    assert flat.training_auc == 0.5


def test_threshold_less_is_member():
    model = train_attack_model(table([0.1] * 4 + [0.9] * 4, [M] * 4 + [N] * 4))
    assert model.parameters["direction"] == "less_is_member" and model.training_auc == 1.0
    assert model.predict([[0.1], [0.9]]).tolist() == [True, False]


def test_training_needs_both_classes():
    with pytest.raises(DegenerateLabels):
        train_attack_model(table([1, 2], [M, M]))


@given(st.lists(st.tuples(st.integers(-50, 50), st.booleans()), min_size=3, max_size=40))
def test_threshold_rank_invariance(rows):
    s = np.array([x for x, _ in rows])
    labs = [M if m else N for _, m in rows]
    if len(set(labs)) < 2:
        return
    a = train_attack_model(table(s, labs))
    b = train_attack_model(table(np.exp(s / 10) * 3 + 1, labs))
    ca = roc_curve(a.score(s[:, None]), labs)
    cb = roc_curve(b.score((np.exp(s / 10) * 3 + 1)[:, None]), labs)
    assert a.parameters["direction"] == b.parameters["direction"]
    assert np.allclose(ca.fpr, cb.fpr) and np.allclose(ca.tpr, cb.tpr)


def test_logistic_random_separable_sets():
    rng = np.random.default_rng(21)
    fitted = 0
    while fitted < 25:
        n = int(rng.integers(4, 13))
        X = rng.uniform(-1, 1, size=(n, 2))
        w = rng.normal(size=2)
        margin = X @ w + rng.normal(scale=0.2)
        y = margin > 0
        if y.all() or not y.any():
            continue
        assert enumerate_separators(X, y)
        model = train_attack_model(table(X, [M if v else N for v in y]), "logistic")
        assert model.parameters["iterations"] <= 1000
        assert np.array_equal(model.predict(X), y)
        fitted += 1


def test_logistic_deterministic():
    rng = np.random.default_rng(2)
    t = table(rng.normal(size=(30, 2)), list(rng.permutation([M] * 15 + [N] * 15)))
    a, b = train_attack_model(t, "logistic"), train_attack_model(t, "logistic")
    assert a.parameters == b.parameters
    assert all(np.isfinite(a.parameters["weights"]))


def test_run_mia_ignores_unknown_and_writes_curve(tmp_path):
    train = table([0.9, 0.8, 0.2, 0.1], [M, M, N, N])
    target = table([0.95, 0.7, 0.3, 0.05, 0.5], [M, M, N, N, "unknown"])
    res = run_mia(train, target)
    assert res["auc"] == 1.0 and res["tpr_at_fpr"] == 1.0
    assert (res["n_members"], res["n_nonmembers"]) == (2, 2)
    text = write_roc_csv(res["curve"], tmp_path / "roc.csv").read_text().splitlines()
    assert text[0] == "fpr,tpr" and len(text) == 6
