"""Training-data mitigations: complete anonymization (CA), pseudonymization (PS),
prefix preservation (PP) and Laplace noise on sensitive header fields (DP).

Every transform keeps captures structurally valid: header bytes are rewritten in
place, the IPv4 checksum is recomputed, and transport checksums are carried
forward incrementally against the original packet.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .capture_io import (
    ETH_LEN,
    ETHERTYPE_ARP,
    CaptureFile,
    PacketRecord,
    recompute_checksums,
    record_from_frame,
    replace_fields,
)
from .errors import NoPerturbableFields, PseudonymSpaceExhausted
from .properties import FIELD_DOMAINS, SENSITIVE_FIELDS

STRATEGIES = ("CA", "PS", "PP", "DP")
IP_BITS, MAC_BITS = 32, 48
PSEUDONYM_IP_BASE = 0xF0000000  # 240.0.0.0/4, reserved
MAC_LOCAL_BIT = 0x02 << 40
# CA defaults: TEST-NET-1 host and a locally administered unicast MAC; an all-zero
# constant would coincide with zero padding elsewhere in the header
CA_DEFAULT_IP = 0xC0000201  # 192.0.2.1
CA_DEFAULT_MAC = 0x020000000001
MAC_MULTICAST_BIT = 0x01 << 40
PSEUDONYM_RETRIES = 64

# per-field clipping bounds and sensitivity (domain width) for DP noise
DP_DOMAINS = {f: d for f, d in FIELD_DOMAINS.items() if d is not None}
DP_DOMAINS["packet_size"] = (0, 0xFFFF)
DP_RECORD_FIELD = {"packet_size": "total_len"}


@dataclass
class MitigationConfig:
    strategy: str
    constant_ip: int = CA_DEFAULT_IP
    constant_mac: int = CA_DEFAULT_MAC
    seed: int = 0
    k_ip: int = 8
    k_mac: int = 12
    epsilon: float = 1.0
    target_fields: tuple = ()

    def __post_init__(self):
        self.strategy = self.strategy.upper()
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0 <= self.k_ip <= IP_BITS or not 0 <= self.k_mac <= MAC_BITS:
            raise ValueError("k_ip must be in [0, 32] and k_mac in [0, 48]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        self.target_fields = tuple(self.target_fields)

    def manifest(self) -> dict:
        """Applied parameters for the output manifest (never includes a pseudonym map)."""
        keep = {
            "CA": ("constant_ip", "constant_mac"),
            "PS": ("seed",),
            "PP": ("k_ip", "k_mac"),
            "DP": ("epsilon", "target_fields", "seed"),
        }[self.strategy]
        d = asdict(self)
        out = {"strategy": self.strategy, **{k: d[k] for k in keep}}
        if "target_fields" in out:
            out["target_fields"] = list(out["target_fields"])
        return out


# --------------------------------------------------------------------------
# identifier rewriting


def _arp_body(h) -> bool:
    return (
        len(h) >= ETH_LEN + 28
        and int.from_bytes(h[12:14], "big") == ETHERTYPE_ARP
        and h[14:20] == b"\x00\x01\x08\x00\x06\x04"
    )


def _rewrite_identifiers(p: PacketRecord, ip_fn: Callable[[int], int], mac_fn: Callable[[int], int]) -> PacketRecord:
    h = bytearray(p.header_bytes)
    if len(h) < ETH_LEN:
        return p

    def sub(off, width, fn):
        h[off : off + width] = fn(int.from_bytes(h[off : off + width], "big")).to_bytes(width, "big")

    sub(0, 6, mac_fn)
    sub(6, 6, mac_fn)
    if p.is_ipv4:
        sub(ETH_LEN + 12, 4, ip_fn)
        sub(ETH_LEN + 16, 4, ip_fn)
    elif _arp_body(h):
        sub(22, 6, mac_fn)
        sub(28, 4, ip_fn)
        sub(32, 6, mac_fn)
        sub(38, 4, ip_fn)
    if bytes(h) == p.header_bytes:
        return p
    out = record_from_frame(p.ts_micros, bytes(h), p.total_len)
    return recompute_checksums(out, original=p)


def rewrite_corpus(corpus: Sequence[CaptureFile], ip_fn, mac_fn) -> list:
    return [c.with_packets(_rewrite_identifiers(p, ip_fn, mac_fn) for p in c.packets) for c in corpus]


def corpus_identifiers(corpus: Sequence[CaptureFile]) -> tuple:
    """(IPs, MACs) appearing anywhere in the corpus headers, ARP bodies included."""
    ips, macs = set(), set()

    def grab_ip(v):
        ips.add(v)
        return v

    def grab_mac(v):
        macs.add(v)
        return v

    for c in corpus:
        for p in c.packets:
            _rewrite_identifiers(p, grab_ip, grab_mac)
    return ips, macs


@dataclass
class PseudonymMap:
    ip: dict = field(default_factory=dict)
    mac: dict = field(default_factory=dict)
    seed: int = 0

    def inverse(self) -> "PseudonymMap":
        return PseudonymMap({v: k for k, v in self.ip.items()}, {v: k for k, v in self.mac.items()}, self.seed)

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "ip": {str(k): v for k, v in sorted(self.ip.items())},
             "mac": {str(k): v for k, v in sorted(self.mac.items())}},
            sort_keys=True,
        )


def _draw_unique(rng, real: set, taken: set, draw) -> int:
    for _ in range(PSEUDONYM_RETRIES):
        v = draw()
        if v not in real and v not in taken:
            return v
    raise PseudonymSpaceExhausted(f"no unused pseudonym after {PSEUDONYM_RETRIES} draws")


def build_pseudonym_map(corpus: Sequence[CaptureFile], seed: int = 0) -> PseudonymMap:
    rng = np.random.default_rng(seed)
    ips, macs = corpus_identifiers(corpus)
    pmap = PseudonymMap(seed=int(seed))
    taken: set = set()
    for ip in sorted(ips):
        pmap.ip[ip] = _draw_unique(rng, ips, taken, lambda: PSEUDONYM_IP_BASE | int(rng.integers(0, 1 << 28)))
        taken.add(pmap.ip[ip])
    taken = set()
    for mac in sorted(macs):
        pmap.mac[mac] = _draw_unique(
            rng, macs, taken, lambda: (int(rng.integers(0, 1 << 48)) & ~MAC_MULTICAST_BIT) | MAC_LOCAL_BIT
        )
        taken.add(pmap.mac[mac])
    return pmap


def apply_pseudonym_map(corpus: Sequence[CaptureFile], pmap: PseudonymMap) -> list:
    return rewrite_corpus(corpus, lambda v: pmap.ip.get(v, v), lambda v: pmap.mac.get(v, v))


def pseudonymize(corpus: Sequence[CaptureFile], seed: int = 0) -> tuple:
    pmap = build_pseudonym_map(corpus, seed)
    return apply_pseudonym_map(corpus, pmap), pmap


def prefix_mask(value: int, k: int) -> int:
    return value & ~((1 << k) - 1)


def anonymize(corpus: Sequence[CaptureFile], cfg: MitigationConfig) -> list:
    if cfg.strategy == "CA":
        return rewrite_corpus(corpus, lambda _: cfg.constant_ip, lambda _: cfg.constant_mac)
    if cfg.strategy == "PS":
        return pseudonymize(corpus, cfg.seed)[0]
    if cfg.strategy == "PP":
        return rewrite_corpus(corpus, lambda v: prefix_mask(v, cfg.k_ip), lambda v: prefix_mask(v, cfg.k_mac))
    raise ValueError(f"{cfg.strategy} is not an anonymization strategy")


# --------------------------------------------------------------------------
# DP noise


def perturbable_fields(target_fields: Sequence[str]) -> tuple:
    unknown = set(target_fields) - set(SENSITIVE_FIELDS)
    if unknown:
        raise NoPerturbableFields(f"not sensitive properties: {sorted(unknown)}")
    fields = tuple(f for f in dict.fromkeys(target_fields) if f != "flow_size")
    if not fields:
        raise NoPerturbableFields("no per-packet field to perturb (flow_size is derived)")
    return fields


def noise_scale(field: str, epsilon: float, n_fields: int) -> float:
    """Laplace scale b = sensitivity / (epsilon / n_fields), sensitivity = domain width."""
    lo, hi = DP_DOMAINS[field]
    if math.isinf(epsilon):
        return 0.0
    return (hi - lo) * n_fields / epsilon


def laplace_noise(rng: np.random.Generator, scale: float, size=None):
    if scale == 0:
        return np.zeros(size) if size is not None else 0.0
    return rng.laplace(0.0, scale, size)


def _clip_bounds(field: str, p: PacketRecord) -> tuple:
    lo, hi = DP_DOMAINS[field]
    if field == "packet_size":
        return len(p.header_bytes), hi + ETH_LEN
    return lo, hi


def dp_perturb(corpus: Sequence[CaptureFile], cfg: MitigationConfig, rng: Optional[np.random.Generator] = None) -> list:
    fields = perturbable_fields(cfg.target_fields)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    scales = {f: noise_scale(f, cfg.epsilon, len(fields)) for f in fields}
    out = []
    for c in corpus:
        packets = []
        for p in c.packets:
            changes = {}
            for f in fields:
                attr = DP_RECORD_FIELD.get(f, f)
                x = getattr(p, attr)
                if x is None or (f != "packet_size" and not p.is_ipv4):
                    continue
                lo, hi = _clip_bounds(f, p)
                v = int(min(max(round(x + laplace_noise(rng, scales[f])), lo), hi))
                if v != x:
                    changes[attr] = v
            if changes and p.is_ipv4:
                packets.append(recompute_checksums(replace_fields(p, **changes), original=p))
            elif changes:
                packets.append(PacketRecord(**{**_record_dict(p), **changes}))
            else:
                packets.append(p)
        out.append(c.with_packets(packets))
    return out


def _record_dict(p: PacketRecord) -> dict:
    return {k: getattr(p, k) for k in p.__dataclass_fields__}


def mitigate(corpus: Sequence[CaptureFile], cfg: MitigationConfig) -> list:
    if cfg.strategy == "DP":
        return dp_perturb(corpus, cfg)
    return anonymize(corpus, cfg)


def write_pseudonym_map(pmap: PseudonymMap, path) -> Path:
    """Write the map readable by the owner only."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w") as fh:
        fh.write(pmap.to_json())
    os.chmod(path, 0o600)
    return path
