"""Token renderings of captures and a verbatim n-gram index over a training corpus."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .capture_io import CaptureFile
from .errors import MixedSchemes

SCHEMES = ("bit", "hex", "byte")
_MAX_TOKEN = {"bit": 1, "hex": 15, "byte": 255}
TOKENS_PER_BYTE = {"bit": 8, "hex": 2, "byte": 1}

# byte value -> token string, precomputed per scheme
_EXPAND = {
    "byte": [bytes([b]) for b in range(256)],
    "hex": [bytes([b >> 4, b & 0x0F]) for b in range(256)],
    "bit": [bytes((b >> (7 - i)) & 1 for i in range(8)) for b in range(256)],
}


@dataclass(frozen=True)
class TokenSequence:
    """Tokens are held as a ``bytes`` object; every token value fits in one byte."""

    scheme: str
    tokens: bytes
    packet_offsets: tuple = (0,)
    source_id: str = ""

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not isinstance(self.tokens, bytes):
            object.__setattr__(self, "tokens", bytes(self.tokens))
        object.__setattr__(self, "packet_offsets", tuple(self.packet_offsets))
        top = _MAX_TOKEN[self.scheme]
        if self.tokens and max(self.tokens) > top:
            raise ValueError(f"token out of range for scheme {self.scheme}")
        offs = self.packet_offsets
        if offs and (offs[0] != 0 or any(b <= a for a, b in zip(offs, offs[1:]))):
            raise ValueError("packet_offsets must start at 0 and strictly increase")

    def __len__(self) -> int:
        return len(self.tokens)


def expand_bytes(data: bytes, scheme: str) -> bytes:
    if scheme == "byte":
        return bytes(data)
    table = _EXPAND[scheme]
    return b"".join(table[b] for b in data)


def tokenize(c: CaptureFile, scheme: str = "byte") -> TokenSequence:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    parts, offsets, pos = [], [], 0
    for p in c.packets:
        chunk = expand_bytes(p.header_bytes, scheme)
        if not chunk:
            continue
        offsets.append(pos)
        parts.append(chunk)
        pos += len(chunk)
    return TokenSequence(scheme, b"".join(parts), tuple(offsets) or (0,), source_id=c.origin_id)


def tokens_to_bytes(tokens: bytes, scheme: str) -> bytes:
    if scheme == "byte":
        return bytes(tokens)
    k = TOKENS_PER_BYTE[scheme]
    width = 8 // k
    out = bytearray()
    for i in range(0, len(tokens), k):
        v = 0
        for t in tokens[i : i + k]:
            v = (v << width) | t
        out.append(v)
    return bytes(out)


def detokenize(seq: TokenSequence) -> list:
    """Per-packet header bytes recovered from a token sequence."""
    bounds = list(seq.packet_offsets) + [len(seq.tokens)]
    return [tokens_to_bytes(seq.tokens[a:b], seq.scheme) for a, b in zip(bounds, bounds[1:]) if b > a]


def windows(tokens: bytes, n: int) -> list:
    return [tokens[i : i + n] for i in range(len(tokens) - n + 1)]


@dataclass
class CorpusIndex:
    n: int
    scheme: Optional[str]
    aligned: bool = False
    positions: dict = field(default_factory=dict)
    by_position: dict = field(default_factory=dict)
    n_sequences: int = 0

    def __contains__(self, window) -> bool:
        return bytes(window) in self.positions

    def lookup(self, window) -> list:
        """All (sequence_id, start_index) pairs where ``window`` occurs."""
        return [(packed >> 32, packed & 0xFFFFFFFF) for packed in self.positions.get(bytes(window), ())]

    def lookup_at(self, start: int, window) -> list:
        """Sequence ids holding ``window`` at exactly ``start``; needs an aligned index."""
        return list(self.by_position.get((start, bytes(window)), ()))

    def __len__(self) -> int:
        return sum(len(v) for v in self.positions.values())


def build_corpus_index(seqs: Sequence[TokenSequence], n: int = 10, aligned: bool = False) -> CorpusIndex:
    if n < 1:
        raise ValueError("n must be >= 1")
    schemes = {s.scheme for s in seqs}
    if len(schemes) > 1:
        raise MixedSchemes(f"sequences mix schemes {sorted(schemes)}")
    idx = CorpusIndex(n=n, scheme=next(iter(schemes), None), aligned=aligned, n_sequences=len(seqs))
    add_sequences(idx, seqs, start_id=0)
    return idx


def add_sequences(idx: CorpusIndex, seqs: Iterable[TokenSequence], start_id: Optional[int] = None) -> CorpusIndex:
    """Append sequences to an existing index (single writer)."""
    sid = idx.n_sequences if start_id is None else start_id
    n = idx.n
    positions, by_position = idx.positions, idx.by_position
    for s in seqs:
        if idx.scheme is None:
            idx.scheme = s.scheme
        elif s.scheme != idx.scheme:
            raise MixedSchemes(f"index scheme {idx.scheme}, got {s.scheme}")
        toks = s.tokens
        for i in range(len(toks) - n + 1):
            w = toks[i : i + n]
            positions.setdefault(w, []).append((sid << 32) | i)
            if idx.aligned:
                by_position.setdefault((i, w), []).append(sid)
        sid += 1
    idx.n_sequences = max(idx.n_sequences, sid)
    return idx
