import numpy as np
import pytest

from synthpriv.capture_io import CaptureFile, Flow, PacketRecord, assemble_flows, record_from_frame
from synthpriv.errors import DegenerateLabels, EmptyCorpus, LabelMismatch
from synthpriv.minicorpus import build_mini_corpus, tcp_frame, udp_frame
from synthpriv.mitigation import pseudonymize
from synthpriv.utility import (
    FEATURE_NAMES,
    accuracy,
    fidelity_report,
    flow_features,
    labeled_flows,
    load_labeled_flows,
    save_labeled_flows,
    train_classifier,
    utility_delta,
)


def port_capture(dport, proto="tcp", n=5):
    build = tcp_frame if proto == "tcp" else udp_frame
    pk = []
    for i in range(n):
        frame, wire = build(1, 2, 0x0A000001, 0x0A000002, 40000, dport)
        pk.append(record_from_frame(i, frame, wire))
    return [CaptureFile("x", "x", tuple(pk))]


def test_identity_fidelity(mini_corpus):
    rep = fidelity_report(mini_corpus, mini_corpus)
    assert all(v == 0.0 for v in rep.as_dict().values())


def test_port_point_masses():
    rep = fidelity_report(port_capture(443), port_capture(80))
    assert rep.emd_dp == pytest.approx(363 / 65535, abs=1e-15)
    assert rep.emd_sp == 0.0


def test_protocol_point_masses():
    rep = fidelity_report(port_capture(53, "tcp"), port_capture(53, "udp"))
    assert rep.emd_pr == pytest.approx(11 / 255, abs=1e-15)


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        fidelity_report([CaptureFile("x", "x", ())], port_capture(80))


def test_fidelity_symmetric_and_rename_invariant():
    corpus = build_mini_corpus(per_label=1, n_packets=150)
    other = build_mini_corpus(seed=3, per_label=1, n_packets=150)
    a, b = fidelity_report(corpus, other).as_dict(), fidelity_report(other, corpus).as_dict()
    assert a == pytest.approx(b, abs=1e-12)
    renamed, _ = pseudonymize(corpus, seed=2)
    r = fidelity_report(renamed, other)
    assert r.emd_sa == pytest.approx(a["emd_sa"], abs=1e-12) and r.emd_da == pytest.approx(a["emd_da"], abs=1e-12)
    assert all(0 <= v <= 1 for v in a.values())


def _flow(sizes, times):
    f = Flow()
    for s, t in zip(sizes, times):
        if f.timestamps:
            f.inter_arrival_micros.append(t - f.timestamps[-1])
        f.timestamps.append(t)
        f.packet_sizes.append(s)
        f.packet_count += 1
        f.byte_count += s
    return f


def test_flow_features():
    one = flow_features(_flow([60], [0]))
    assert one[3] == 0 and one[4] == 0 and one[5] == 0
    v = flow_features(_flow([100, 100, 400], [0, 10, 30]))
    assert v[2] == 200 and v[3] == pytest.approx(np.sqrt(20000))
    w = flow_features(_flow([100, 400, 100], [0, 5, 30]))
    diff = [FEATURE_NAMES[i] for i in np.flatnonzero(v != w)]
    assert set(diff) <= {"mean_inter_arrival", "std_inter_arrival"} and diff


def test_flow_features_finite(mini_corpus):
    X, y = labeled_flows(mini_corpus)
    assert X.shape[1] == len(FEATURE_NAMES) and len(y) == len(X)
    assert np.isfinite(X).all()
    assert len(X) == sum(len(assemble_flows(c)) for c in mini_corpus)


def test_classifier_separable_and_deterministic():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-3, 1, (40, 2)), rng.normal(3, 1, (40, 2))])
    X = X[np.abs(X.sum(axis=1)) > 0.5]
    y = ["a" if x.sum() < 0 else "b" for x in X]
    clf = train_classifier(X, y, seed=1)
    assert accuracy(clf, X, y) == 1.0
    again = train_classifier(X, y, seed=1)
    assert np.array_equal(clf.weights, again.weights) and np.array_equal(clf.biases, again.biases)
    with pytest.raises(DegenerateLabels):
        train_classifier(X, ["a"] * len(X))


def test_classifier_random_labels_near_chance():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(4000, 2))
    y = list(rng.permutation(["a", "b"] * 2000))
    assert abs(accuracy(train_classifier(X, y), X, y) - 0.5) <= 0.05


def test_utility_delta_identity_and_mismatch():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 3))
    y = ["a", "b", "c"] * 20
    assert utility_delta((X, y), (X, y), (X, y))["delta"] == 0.0
    with pytest.raises(LabelMismatch):
        utility_delta((X, y), (X, y), (X[:2], ["a", "z"]))


def test_shuffled_labels_cost_utility():
    deltas = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = np.vstack([rng.normal(-1, 1, (100, 2)), rng.normal(1, 1, (100, 2))])
        y = ["a"] * 100 + ["b"] * 100
        test = (X + rng.normal(scale=0.1, size=X.shape), y)
        deltas.append(utility_delta((X, y), (X, list(rng.permutation(y))), test, seed)["delta"])
    assert np.mean(deltas) <= 0


def test_labeled_flow_csv_roundtrip(tmp_path, mini_corpus):
    X, y = labeled_flows(mini_corpus[:4])
    X2, y2 = load_labeled_flows(save_labeled_flows(X, y, tmp_path / "f.csv"))
    assert np.array_equal(X, X2) and y == y2


def test_packet_record_without_ports_is_skipped():
    X, _ = labeled_flows([CaptureFile("x", "x", (PacketRecord(0, 60, bytes(14)),))])
    assert X.shape == (0, len(FEATURE_NAMES))
