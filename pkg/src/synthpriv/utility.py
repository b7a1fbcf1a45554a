"""Utility of synthetic traffic: fidelity EMDs and downstream flow-classification deltas."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .capture_io import Flow, FiveTuple, assemble_flows
from .errors import DegenerateLabels, EmptyCorpus, LabelMismatch
from .mia import fit_logistic, standardize_fit
from .properties import emd_1d

FEATURE_NAMES = (
    "packet_count",
    "byte_count",
    "mean_packet_size",
    "std_packet_size",
    "mean_inter_arrival",
    "std_inter_arrival",
    "protocol",
    "src_port",
    "dst_port",
)
PORT_DOMAIN = (0, 65535)
PROTO_DOMAIN = (0, 255)


@dataclass(frozen=True)
class FidelityReport:
    emd_sa: float
    emd_da: float
    emd_sp: float
    emd_dp: float
    emd_pr: float

    def as_dict(self) -> dict:
        return asdict(self)

    def mean(self) -> float:
        return float(np.mean(list(asdict(self).values())))


def rank_frequency(corpus, attr: str) -> np.ndarray:
    counts = Counter(v for c in corpus for p in c.packets if (v := getattr(p, attr)) is not None)
    freq = np.array(sorted(counts.values(), reverse=True), dtype=float)
    return freq / freq.sum() if len(freq) else freq


def rank_frequency_emd(fa: np.ndarray, fb: np.ndarray) -> float:
    """EMD between two rank-frequency curves, treated as distributions over rank index."""
    L = max(len(fa), len(fb))
    if L <= 1:
        return 0.0
    ranks = np.arange(L)
    wa = np.pad(fa, (0, L - len(fa)))
    wb = np.pad(fb, (0, L - len(fb)))
    return min(1.0, emd_1d(ranks, wa, ranks, wb) / (L - 1))


def _value_emd(corpus_a, corpus_b, attr: str, domain) -> float:
    va = Counter(v for c in corpus_a for p in c.packets if (v := getattr(p, attr)) is not None)
    vb = Counter(v for c in corpus_b for p in c.packets if (v := getattr(p, attr)) is not None)
    if not va or not vb:
        return 0.0 if not va and not vb else 1.0
    xa, wa = zip(*sorted(va.items()))
    xb, wb = zip(*sorted(vb.items()))
    wa = np.array(wa, float) / sum(wa)
    wb = np.array(wb, float) / sum(wb)
    return min(1.0, emd_1d(xa, wa, xb, wb) / (domain[1] - domain[0]))


def fidelity_report(train, gen) -> FidelityReport:
    for name, corpus in (("training", train), ("generated", gen)):
        if not any(p.is_ipv4 for c in corpus for p in c.packets):
            raise EmptyCorpus(f"{name} corpus has no IPv4 packets")
    return FidelityReport(
        emd_sa=rank_frequency_emd(rank_frequency(train, "src_ip"), rank_frequency(gen, "src_ip")),
        emd_da=rank_frequency_emd(rank_frequency(train, "dst_ip"), rank_frequency(gen, "dst_ip")),
        emd_sp=_value_emd(train, gen, "src_port", PORT_DOMAIN),
        emd_dp=_value_emd(train, gen, "dst_port", PORT_DOMAIN),
        emd_pr=_value_emd(train, gen, "protocol", PROTO_DOMAIN),
    )


# --------------------------------------------------------------------------
# flow features and the downstream classifier


def flow_features(f: Flow, key: Optional[FiveTuple] = None) -> np.ndarray:
    sizes = np.asarray(f.packet_sizes, dtype=float)
    iat = np.asarray(f.inter_arrival_micros, dtype=float)
    return np.array(
        [
            f.packet_count,
            f.byte_count,
            sizes.mean() if len(sizes) else 0.0,
            sizes.std() if len(sizes) > 1 else 0.0,
            iat.mean() if len(iat) else 0.0,
            iat.std() if len(iat) > 1 else 0.0,
            key.protocol if key else 0,
            key.src_port if key else 0,
            key.dst_port if key else 0,
        ],
        dtype=float,
    )


def labeled_flows(corpus) -> tuple:
    """(features, labels): one row per flow, labeled with its capture's label."""
    rows, labels = [], []
    for c in corpus:
        for key, f in assemble_flows(c).flows.items():
            rows.append(flow_features(f, key))
            labels.append(c.label)
    return np.array(rows, dtype=float).reshape(-1, len(FEATURE_NAMES)), labels


@dataclass
class Classifier:
    classes: list
    weights: np.ndarray
    biases: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    seed: int = 0

    def scores(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.mean) / self.std
        return Z @ self.weights.T + self.biases

    def predict(self, X) -> list:
        idx = np.argmax(self.scores(X), axis=1)
        return [self.classes[i] for i in idx]


def train_classifier(features, labels, seed: int = 0) -> Classifier:
    """One-vs-rest L2 logistic regression on standardized features.

    The solver is deterministic; ``seed`` is recorded so runs are traceable.
    """
    X = np.asarray(features, dtype=float)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise DegenerateLabels("classifier needs at least two classes")
    mean, std = standardize_fit(X)
    Z = (X - mean) / std
    y = np.asarray(labels)
    W, B = [], []
    for cls in classes:
        w, b, _ = fit_logistic(Z, (y == cls).astype(float))
        W.append(w)
        B.append(b)
    return Classifier(classes, np.array(W), np.array(B), mean, std, seed)


def accuracy(clf: Classifier, features, labels) -> float:
    pred = clf.predict(features)
    return float(np.mean([a == b for a, b in zip(pred, labels)]))


def utility_delta(unmitigated_gen: tuple, mitigated_gen: tuple, real_test: tuple, seed: int = 0) -> dict:
    """Accuracy(mitigated-trained) minus accuracy(unmitigated-trained) on the same real test set.

    Each argument is a (features, labels) pair.
    """
    base = train_classifier(*unmitigated_gen, seed=seed)
    mitig = train_classifier(*mitigated_gen, seed=seed)
    X_test, y_test = real_test
    missing = set(y_test) - (set(base.classes) & set(mitig.classes))
    if missing:
        raise LabelMismatch(f"test labels unknown to a classifier: {sorted(missing)}")
    acc_base = accuracy(base, X_test, y_test)
    acc_mitig = accuracy(mitig, X_test, y_test)
    return {"accuracy_unmitigated": acc_base, "accuracy_mitigated": acc_mitig, "delta": acc_mitig - acc_base}


def save_labeled_flows(features, labels, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*FEATURE_NAMES, "label"])
        for row, lab in zip(np.asarray(features), labels):
            w.writerow([*(repr(float(v)) for v in row), lab])
    return path


def load_labeled_flows(path) -> tuple:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(FEATURE_NAMES) - set(reader.fieldnames or ()) | ({"label"} - set(reader.fieldnames or ()))
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows, labels = [], []
        for r in reader:
            rows.append([float(r[k]) for k in FEATURE_NAMES])
            labels.append(r["label"])
    return np.array(rows, dtype=float).reshape(-1, len(FEATURE_NAMES)), labels
