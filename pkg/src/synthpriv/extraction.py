"""Verbatim-extraction test of generated sequences against an indexed training corpus."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import EmptyGenerationSet, SchemeMismatch, UnalignedIndex
from .tokens import TOKENS_PER_BYTE, CorpusIndex, TokenSequence


@dataclass
class ExtractionReport:
    n: int
    extractable_rate: float
    per_sequence: list
    positional_rates: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _check_scheme(g: TokenSequence, idx: CorpusIndex):
    if idx.scheme is not None and g.scheme != idx.scheme:
        raise SchemeMismatch(f"generated scheme {g.scheme} vs index scheme {idx.scheme}")


def is_extractable(g: TokenSequence, idx: CorpusIndex) -> bool:
    """True iff some length-n window of ``g`` occurs anywhere in the training corpus."""
    _check_scheme(g, idx)
    toks, n, pos = g.tokens, idx.n, idx.positions
    return any(toks[i : i + n] in pos for i in range(len(toks) - n + 1))


def extractable_rate(gen: Sequence[TokenSequence], idx: CorpusIndex) -> float:
    if not gen:
        raise EmptyGenerationSet("no generated sequences")
    return sum(is_extractable(g, idx) for g in gen) / len(gen)


def positional_extractable_curve(gen: Sequence[TokenSequence], idx: CorpusIndex) -> list:
    """(position, rate) for every position at which at least one generated sequence is evaluable.

    A position matches when the window starting there equals a training window
    starting at the same index.
    """
    if not idx.aligned:
        raise UnalignedIndex("positional matching needs an index built with aligned=True")
    n = idx.n
    hits: dict = {}
    evaluable: dict = {}
    for g in gen:
        _check_scheme(g, idx)
        toks = g.tokens
        for p in range(len(toks) - n + 1):
            evaluable[p] = evaluable.get(p, 0) + 1
            if (p, toks[p : p + n]) in idx.by_position:
                hits[p] = hits.get(p, 0) + 1
    return [(p, hits.get(p, 0) / evaluable[p]) for p in sorted(evaluable)]


def extraction_report(gen: Sequence[TokenSequence], idx: CorpusIndex, positional: bool = True) -> ExtractionReport:
    per_seq = [is_extractable(g, idx) for g in gen]
    if not per_seq:
        raise EmptyGenerationSet("no generated sequences")
    curve = positional_extractable_curve(gen, idx) if positional and idx.aligned else []
    return ExtractionReport(idx.n, sum(per_seq) / len(per_seq), per_seq, curve)


def _field_window_starts(g: TokenSequence, spans: Sequence[tuple], n: int):
    """Yield (start, offset within its packet) for every window covering a protected field.

    A window covers a field when it contains the whole field, or lies inside it
    when the field is longer than the window.
    """
    k = TOKENS_PER_BYTE[g.scheme]
    total = len(g.tokens)
    seen = set()
    for off in g.packet_offsets:
        for a, b in spans:
            lo, hi = off + a * k, off + b * k
            if hi > total:
                continue
            starts = range(lo, hi - n + 1) if hi - lo > n else range(max(0, hi - n), lo + 1)
            for p in starts:
                if p + n <= total and p not in seen:
                    seen.add(p)
                    yield p, p - off


def field_window_match_rate(gen: Sequence[TokenSequence], train: Sequence[TokenSequence],
                            spans: Sequence[tuple], n: int = 10) -> tuple:
    """Verbatim matches of protected-field windows, compared field to field.

    ``spans`` are (start, stop) byte offsets within each packet header, e.g. the MAC and
    IP address fields. A generated window matches when some training packet carries the
    same tokens at the same header offset, so identifier bytes are only compared with
    identifier bytes. Returns (matched, considered).
    """
    schemes = {s.scheme for s in train} | {g.scheme for g in gen}
    if len(schemes) > 1:
        raise SchemeMismatch(f"mixed schemes {sorted(schemes)}")
    known = set()
    for t in train:
        toks = t.tokens
        for p, rel in _field_window_starts(t, spans, n):
            known.add((rel, toks[p : p + n]))
    matched = considered = 0
    for g in gen:
        toks = g.tokens
        for p, rel in _field_window_starts(g, spans, n):
            considered += 1
            matched += (rel, toks[p : p + n]) in known
    return matched, considered


def write_curve_csv(curve, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "rate"])
        w.writerows((p, repr(float(r))) for p, r in curve)
    return path
