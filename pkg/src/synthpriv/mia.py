"""Membership-inference harness: signal tables, attack models, ROC statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateLabels, DuplicateSampleId, EmptyTable, RaggedRows
from .tokens import CorpusIndex, build_corpus_index, tokenize

MEMBER, NONMEMBER, UNKNOWN = "member", "nonmember", "unknown"
LABELS = (MEMBER, NONMEMBER, UNKNOWN)

L2_PENALTY = 1e-4
MAX_ITER = 1000
LOSS_TOL = 1e-8


@dataclass
class SignalTable:
    sample_ids: list
    labels: list
    signals: np.ndarray
    signal_names: list

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=float).reshape(len(self.sample_ids), -1)
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise DuplicateSampleId("sample ids must be unique")
        bad = set(self.labels) - set(LABELS)
        if bad:
            raise ValueError(f"unknown labels {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.sample_ids)

    def member_mask(self) -> np.ndarray:
        return np.array([lab == MEMBER for lab in self.labels], dtype=bool)

    def subset(self, mask) -> "SignalTable":
        idx = np.flatnonzero(mask)
        return SignalTable([self.sample_ids[i] for i in idx], [self.labels[i] for i in idx],
                           self.signals[idx], list(self.signal_names))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SignalTable)
            and self.sample_ids == other.sample_ids
            and self.labels == other.labels
            and self.signal_names == other.signal_names
            and np.array_equal(self.signals, other.signals)
        )


def load_signals(path) -> SignalTable:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["sample_id", "label"] or len(header) < 3:
            raise EmptyTable(f"{path}: expected header sample_id,label,<signals...>")
        names = header[2:]
        ids, labels, rows = [], [], []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRows(f"{path}:{lineno}: {len(row)} columns, expected {len(header)}")
            if row[0] in seen:
                raise DuplicateSampleId(f"{path}:{lineno}: duplicate sample id {row[0]!r}")
            seen.add(row[0])
            ids.append(row[0])
            labels.append(row[1].strip().lower() or UNKNOWN)
            rows.append([float(x) for x in row[2:]])
    if not ids:
        raise EmptyTable(f"{path}: no rows")
    return SignalTable(ids, labels, np.array(rows), names)


def save_signals(table: SignalTable, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label", *table.signal_names])
        for sid, lab, vec in zip(table.sample_ids, table.labels, table.signals):
            w.writerow([sid, lab, *(repr(float(v)) for v in vec)])
    return path


def overlap_signal(target, generated, scheme: str = "byte", n: int = 10) -> float:
    """Fraction of the target capture's n-token windows found anywhere in the generated corpus.

    ``generated`` is a list of TokenSequence or a prebuilt CorpusIndex.
    """
    idx = generated if isinstance(generated, CorpusIndex) else build_corpus_index(generated, n=n)
    toks = tokenize(target, scheme).tokens
    n = idx.n
    total = len(toks) - n + 1
    if total <= 0:
        return 0.0
    return sum(toks[i : i + n] in idx.positions for i in range(total)) / total


# --------------------------------------------------------------------------
# ROC


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray = field(default_factory=lambda: np.array([]))

    @property
    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _as_member_bool(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.dtype == bool:
        return arr
    if arr.dtype.kind in "iuf":
        return arr.astype(bool)
    return np.array([lab == MEMBER for lab in arr], dtype=bool)


def roc_curve(scores, labels) -> RocCurve:
    """ROC over descending unique score thresholds; tied scores cross together."""
    s = np.asarray(scores, dtype=float)
    y = _as_member_bool(labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("ROC needs both members and non-members")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last_of_group]
    fp = np.cumsum(~y)[last_of_group]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return RocCurve(fpr, tpr, np.r_[np.inf, s[last_of_group]])


def auc(curve: RocCurve) -> float:
    f, t = curve.fpr, curve.tpr
    return float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2.0))


def tpr_at_fpr(curve: RocCurve, cap: float = 0.01) -> float:
    """Best TPR among operating points whose FPR does not exceed ``cap`` (no interpolation)."""
    ok = curve.fpr <= cap + 1e-12
    return float(curve.tpr[ok].max()) if ok.any() else 0.0


def rank_auc(scores, labels) -> float:
    """P(member score > non-member score) + half the tie probability, by pairwise comparison."""
    s = np.asarray(scores, dtype=float)
    y = _as_member_bool(labels)
    pos, neg = s[y], s[~y]
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


# --------------------------------------------------------------------------
# attack models


def standardize_fit(X: np.ndarray) -> tuple:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def _logistic_loss(Xb, y, beta, l2):
    z = Xb @ beta
    nll = np.mean(np.logaddexp(0.0, z) - y * z)
    return nll + 0.5 * l2 * float(beta[:-1] @ beta[:-1])


def fit_logistic(X, y, l2: float = L2_PENALTY, max_iter: int = MAX_ITER, tol: float = LOSS_TOL) -> tuple:
    """L2-penalized maximum-likelihood logistic fit from a zero start.

    Uses Newton-preconditioned ascent steps with backtracking; stops when the
    loss changes by less than ``tol`` or after ``max_iter`` iterations. The bias
    is not penalized. Returns (weights, bias, iterations).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    beta = np.zeros(d + 1)
    penalty = np.r_[np.full(d, l2), 0.0]
    loss = _logistic_loss(Xb, y, beta, l2)
    it = 0
    for it in range(1, max_iter + 1):
        p = 0.5 * (1.0 + np.tanh(0.5 * (Xb @ beta)))
        grad = Xb.T @ (p - y) / n + penalty * beta
        H = (Xb * (p * (1 - p))[:, None]).T @ Xb / n + np.diag(penalty) + 1e-12 * np.eye(d + 1)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = grad
        t = 1.0
        while True:
            cand = beta - t * step
            new_loss = _logistic_loss(Xb, y, cand, l2)
            if new_loss <= loss or t < 1e-10:
                break
            t *= 0.5
        beta = cand
        delta = loss - new_loss
        loss = new_loss
        if abs(delta) < tol:
            break
    return beta[:-1], float(beta[-1]), it


@dataclass
class AttackModel:
    kind: str
    parameters: dict
    training_auc: float

    def score(self, signals) -> np.ndarray:
        X = np.asarray(signals, dtype=float)
        X = X.reshape(len(X), -1)
        if self.kind == "threshold":
            s = X[:, 0]
            return s if self.parameters["direction"] == "greater_is_member" else -s
        mean = np.asarray(self.parameters["mean"])
        std = np.asarray(self.parameters["std"])
        return ((X - mean) / std) @ np.asarray(self.parameters["weights"]) + self.parameters["bias"]

    def predict(self, signals) -> np.ndarray:
        X = np.asarray(signals, dtype=float).reshape(len(signals), -1)
        if self.kind == "threshold":
            s, c = X[:, 0], self.parameters["cutoff"]
            return s > c if self.parameters["direction"] == "greater_is_member" else s < c
        return self.score(X) > 0


def _check_training_table(table: SignalTable) -> np.ndarray:
    if UNKNOWN in table.labels:
        raise ValueError("attack-model training rows must be labeled member/nonmember")
    y = table.member_mask()
    if y.all() or not y.any():
        raise DegenerateLabels("attack-model training needs both members and non-members")
    return y


def _fit_threshold(s: np.ndarray, y: np.ndarray) -> tuple:
    u = np.unique(s)
    cutoffs = (u[:-1] + u[1:]) / 2.0 if len(u) > 1 else u
    n_pos, n_neg = y.sum(), (~y).sum()
    pos_sorted, neg_sorted = np.sort(s[y]), np.sort(s[~y])
    # members strictly above each cutoff
    tp = n_pos - np.searchsorted(pos_sorted, cutoffs, side="right")
    fp = n_neg - np.searchsorted(neg_sorted, cutoffs, side="right")
    bal_greater = 0.5 * (tp / n_pos + 1 - fp / n_neg)
    tp_less = np.searchsorted(pos_sorted, cutoffs, side="left")
    fp_less = np.searchsorted(neg_sorted, cutoffs, side="left")
    bal_less = 0.5 * (tp_less / n_pos + 1 - fp_less / n_neg)
    ig, il = int(np.argmax(bal_greater)), int(np.argmax(bal_less))
    if bal_less[il] > bal_greater[ig]:
        return "less_is_member", float(cutoffs[il]), float(bal_less[il])
    return "greater_is_member", float(cutoffs[ig]), float(bal_greater[ig])


def train_attack_model(train_table: SignalTable, kind: str = "threshold") -> AttackModel:
    y = _check_training_table(train_table)
    X = train_table.signals
    if kind == "threshold":
        direction, cutoff, bal_acc = _fit_threshold(X[:, 0], y)
        model = AttackModel("threshold", {"direction": direction, "cutoff": cutoff, "balanced_accuracy": bal_acc}, 0.0)
    elif kind == "logistic":
        mean, std = standardize_fit(X)
        w, b, iters = fit_logistic((X - mean) / std, y)
        model = AttackModel(
            "logistic",
            {"weights": w.tolist(), "bias": b, "mean": mean.tolist(), "std": std.tolist(), "iterations": iters},
            0.0,
        )
    else:
        raise ValueError(f"unknown attack model kind {kind!r}")
    model.training_auc = auc(roc_curve(model.score(X), y))
    return model


def run_mia(attack_train: SignalTable, target: SignalTable, kind: str = "threshold", fpr_cap: float = 0.01) -> dict:
    """Fit on (auxiliary=member, non-training=nonmember) rows, evaluate on labeled target rows."""
    model = train_attack_model(attack_train, kind)
    labeled = np.array([lab != UNKNOWN for lab in target.labels])
    tgt = target.subset(labeled)
    y = tgt.member_mask()
    curve = roc_curve(model.score(tgt.signals), y)
    return {
        "kind": kind,
        "auc": auc(curve),
        "tpr_at_fpr": tpr_at_fpr(curve, fpr_cap),
        "fpr_cap": fpr_cap,
        "n_members": int(y.sum()),
        "n_nonmembers": int((~y).sum()),
        "training_auc": model.training_auc,
        "model": model.parameters,
        "curve": curve,
    }


def write_roc_csv(curve: RocCurve, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        w.writerows((repr(float(f)), repr(float(t))) for f, t in zip(curve.fpr, curve.tpr))
    return path


def overlap_signal_table(captures: Sequence, labels: Sequence[str], generated_index: CorpusIndex, scheme: str) -> SignalTable:
    """One ``overlap`` signal row per capture, for demos without model access."""
    ids, sig = [], []
    for c in captures:
        ids.append(c.origin_id)
        sig.append([overlap_signal(c, generated_index, scheme)])
    return SignalTable(ids, list(labels), np.array(sig).reshape(-1, 1), ["overlap"])
