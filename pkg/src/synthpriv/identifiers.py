"""Identifier memorization: output coverage, output confidence and frequency strata."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import BadBins, EmptyGeneratedSet, EmptyTrainingSet

KINDS = ("src_ip", "dst_ip", "src_mac", "dst_mac")


@dataclass
class IdentifierSet:
    kind: str
    counts: Counter = field(default_factory=Counter)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown identifier kind {self.kind!r}")
        self.counts = Counter({k: v for k, v in self.counts.items() if v > 0})

    @property
    def unique(self) -> frozenset:
        return frozenset(self.counts)

    def __len__(self) -> int:
        return len(self.counts)


def collect_identifiers(corpus, kind: str) -> IdentifierSet:
    counts = Counter()
    for c in corpus:
        for p in c.packets:
            v = getattr(p, kind)
            if v is not None:
                counts[v] += 1
    return IdentifierSet(kind, counts)


def _same_kind(gen: IdentifierSet, train: IdentifierSet):
    if gen.kind != train.kind:
        raise ValueError(f"kind mismatch: {gen.kind} vs {train.kind}")


def output_coverage(gen: IdentifierSet, train: IdentifierSet) -> float:
    """Share of unique training identifiers that the generator reproduced."""
    _same_kind(gen, train)
    if not train.counts:
        raise EmptyTrainingSet(f"no {train.kind} identifiers in training data")
    return len(gen.unique & train.unique) / len(train.unique)


def output_confidence(gen: IdentifierSet, train: IdentifierSet) -> float:
    """Share of unique generated identifiers that are real training identifiers."""
    _same_kind(gen, train)
    if not gen.counts:
        raise EmptyGeneratedSet(f"no {gen.kind} identifiers in generated data")
    return len(gen.unique & train.unique) / len(gen.unique)


def log_bin_edges(max_count: int) -> list:
    top = max(1, math.ceil(math.log10(max(max_count, 1) + 1)))
    return [10**i for i in range(top + 1)]


def frequency_stratified_memorization(train: IdentifierSet, gen: IdentifierSet, bin_edges: Optional[Sequence[int]] = None) -> list:
    """Per-bin (bin_low, bin_high, memorized, non_memorized) over training identifiers.

    Bins are [low, high) except the last, which is closed. Identifiers whose
    training count falls outside every bin are not tallied.
    """
    if bin_edges is None:
        bin_edges = log_bin_edges(max(train.counts.values(), default=1))
    edges = list(bin_edges)
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise BadBins(f"bin edges must be >= 2 strictly increasing values, got {edges}")
    rows = [[lo, hi, 0, 0] for lo, hi in zip(edges, edges[1:])]
    last = len(rows) - 1
    gen_unique = gen.unique
    for ident, cnt in train.counts.items():
        for i, row in enumerate(rows):
            if row[0] <= cnt < row[1] or (i == last and cnt == row[1]):
                row[2 if ident in gen_unique else 3] += 1
                break
    return [tuple(r) for r in rows]


def write_histogram_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high", "memorized", "non_memorized"])
        w.writerows(rows)
    return path


def identifier_report(train_corpus, gen_corpus, kinds: Sequence[str] = KINDS) -> dict:
    out = {}
    for kind in kinds:
        t = collect_identifiers(train_corpus, kind)
        g = collect_identifiers(gen_corpus, kind)
        entry = {"n_train_unique": len(t), "n_gen_unique": len(g), "n_common": len(t.unique & g.unique)}
        entry["coverage"] = output_coverage(g, t) if t.counts else None
        entry["confidence"] = output_confidence(g, t) if g.counts else None
        out[kind] = entry
    return out
