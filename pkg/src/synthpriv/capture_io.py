"""Classic pcap reading/writing, header field extraction, flows and dataset splits.

Only Ethernet/IPv4/TCP/UDP are decoded structurally. Anything else is kept as an
opaque frame with the optional fields left as ``None``. Payload bytes beyond the
transport header are not retained: a parsed record keeps ``header_bytes`` plus the
on-wire length, and writing it back produces a header-only (snapped) capture.
"""

from __future__ import annotations

import csv
import logging
import struct
from collections import defaultdict
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    BadMagic,
    InconsistentRecord,
    TooFewLabels,
    TruncatedHeader,
    UnsupportedLinkType,
)

log = logging.getLogger(__name__)

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

ETH_LEN = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806
PROTO_TCP = 6
PROTO_UDP = 17

# fields decoded from header_bytes; used for the write-time consistency check
HEADER_FIELDS = (
    "src_mac",
    "dst_mac",
    "ethertype",
    "src_ip",
    "dst_ip",
    "ttl",
    "ip_id",
    "tos",
    "protocol",
    "src_port",
    "dst_port",
    "tcp_flags",
    "tcp_window",
    "tcp_data_offset",
)


@dataclass(frozen=True)
class PacketRecord:
    ts_micros: int
    total_len: int
    header_bytes: bytes
    src_mac: Optional[int] = None
    dst_mac: Optional[int] = None
    ethertype: Optional[int] = None
    src_ip: Optional[int] = None
    dst_ip: Optional[int] = None
    ttl: Optional[int] = None
    ip_id: Optional[int] = None
    tos: Optional[int] = None
    protocol: Optional[int] = None
    src_port: Optional[int] = None
    dst_port: Optional[int] = None
    tcp_flags: Optional[int] = None
    tcp_window: Optional[int] = None
    tcp_data_offset: Optional[int] = None

    @property
    def is_ipv4(self) -> bool:
        return self.src_ip is not None

    @property
    def is_tcp(self) -> bool:
        return self.tcp_flags is not None

    @property
    def is_udp(self) -> bool:
        return self.protocol == PROTO_UDP and self.src_port is not None

    @property
    def five_tuple(self) -> Optional["FiveTuple"]:
        if self.src_port is None:
            return None
        return FiveTuple(self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.protocol)

    @property
    def ip_header_len(self) -> int:
        return (self.header_bytes[ETH_LEN] & 0x0F) * 4


@dataclass(frozen=True)
class PcapHeader:
    """Global-header values carried along so a rewrite reproduces the input."""

    byte_order: str = "<"
    version_major: int = 2
    version_minor: int = 4
    thiszone: int = 0
    sigfigs: int = 0
    snaplen: int = 65535


@dataclass(frozen=True)
class CaptureFile:
    label: str
    origin_id: str
    packets: tuple
    pcap: PcapHeader = PcapHeader()
    warnings: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return len(self.packets)

    def with_packets(self, packets: Iterable[PacketRecord], **kw) -> "CaptureFile":
        return replace(self, packets=tuple(packets), **kw)


# --------------------------------------------------------------------------
# header decoding


def decode_frame(frame: bytes) -> tuple[int, dict]:
    """Return (header length, decoded fields) for one Ethernet frame."""
    out: dict = {}
    if len(frame) < ETH_LEN:
        return len(frame), out
    out["dst_mac"] = int.from_bytes(frame[0:6], "big")
    out["src_mac"] = int.from_bytes(frame[6:12], "big")
    ethertype = int.from_bytes(frame[12:14], "big")
    out["ethertype"] = ethertype
    if ethertype != ETHERTYPE_IPV4 or len(frame) < ETH_LEN + 20:
        return len(frame), out
    vihl = frame[ETH_LEN]
    ihl = (vihl & 0x0F) * 4
    if vihl >> 4 != 4 or ihl < 20 or len(frame) < ETH_LEN + ihl:
        return len(frame), out
    ip = frame[ETH_LEN:]
    out.update(
        tos=ip[1],
        ip_id=int.from_bytes(ip[4:6], "big"),
        ttl=ip[8],
        protocol=ip[9],
        src_ip=int.from_bytes(ip[12:16], "big"),
        dst_ip=int.from_bytes(ip[16:20], "big"),
    )
    l4 = ETH_LEN + ihl
    frag_offset = int.from_bytes(ip[6:8], "big") & 0x1FFF
    proto = ip[9]
    if frag_offset == 0 and proto == PROTO_TCP and len(frame) >= l4 + 20:
        doff = frame[l4 + 12] >> 4
        if doff >= 5 and len(frame) >= l4 + doff * 4:
            out.update(
                src_port=int.from_bytes(frame[l4 : l4 + 2], "big"),
                dst_port=int.from_bytes(frame[l4 + 2 : l4 + 4], "big"),
                tcp_data_offset=doff,
                tcp_flags=frame[l4 + 13],
                tcp_window=int.from_bytes(frame[l4 + 14 : l4 + 16], "big"),
            )
            return l4 + doff * 4, out
    elif frag_offset == 0 and proto == PROTO_UDP and len(frame) >= l4 + 8:
        out.update(
            src_port=int.from_bytes(frame[l4 : l4 + 2], "big"),
            dst_port=int.from_bytes(frame[l4 + 2 : l4 + 4], "big"),
        )
        return l4 + 8, out
    return l4, out


def record_from_frame(ts_micros: int, frame: bytes, total_len: int) -> PacketRecord:
    hlen, decoded = decode_frame(frame)
    return PacketRecord(ts_micros=ts_micros, total_len=total_len, header_bytes=bytes(frame[:hlen]), **decoded)


def fields_consistent(p: PacketRecord) -> bool:
    hlen, decoded = decode_frame(p.header_bytes)
    if hlen != len(p.header_bytes):
        return False
    return all(getattr(p, name) == decoded.get(name) for name in HEADER_FIELDS)


# --------------------------------------------------------------------------
# pcap parse / write


def parse_capture(raw: bytes, label: str, origin_id: str = "") -> CaptureFile:
    if len(raw) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"global header needs {GLOBAL_HEADER_LEN} bytes, got {len(raw)}")
    magic_le = struct.unpack("<I", raw[:4])[0]
    if magic_le == PCAP_MAGIC:
        bo = "<"
    elif magic_le == 0xD4C3B2A1:
        bo = ">"
    else:
        raise BadMagic(f"unknown pcap magic 0x{magic_le:08X}")
    vmaj, vmin, thiszone, sigfigs, snaplen, linktype = struct.unpack(bo + "HHiIII", raw[4:24])
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {linktype} (only Ethernet is supported)")
    hdr = PcapHeader(bo, vmaj, vmin, thiszone, sigfigs, snaplen)

    packets = []
    warnings = 0
    pos = GLOBAL_HEADER_LEN
    rec = struct.Struct(bo + "IIII")
    while pos < len(raw):
        if pos + RECORD_HEADER_LEN > len(raw):
            warnings += 1
            break
        sec, usec, incl, orig = rec.unpack_from(raw, pos)
        pos += RECORD_HEADER_LEN
        if pos + incl > len(raw):
            warnings += 1
            break
        frame = raw[pos : pos + incl]
        pos += incl
        packets.append(record_from_frame(sec * 1_000_000 + usec, frame, orig))
    if warnings:
        log.warning("%s: truncated trailing record dropped", origin_id or "<capture>")
    packets.sort(key=lambda p: p.ts_micros)  # stable: ties keep file order
    return CaptureFile(label=label, origin_id=origin_id, packets=tuple(packets), pcap=hdr, warnings=warnings)


def read_capture(path, label: str, origin_id: Optional[str] = None) -> CaptureFile:
    path = Path(path)
    return parse_capture(path.read_bytes(), label, str(path) if origin_id is None else origin_id)


def write_capture(c: CaptureFile, fix_checksums: bool = False) -> bytes:
    """Serialize to classic pcap.

    With ``fix_checksums`` each record's header bytes are rebuilt from its fields
    and checksums recomputed; otherwise a record whose fields disagree with its
    header bytes raises :class:`InconsistentRecord`.
    """
    bo = c.pcap.byte_order
    chunks = [
        struct.pack(
            bo + "IHHiIII",
            PCAP_MAGIC,
            c.pcap.version_major,
            c.pcap.version_minor,
            c.pcap.thiszone,
            c.pcap.sigfigs,
            c.pcap.snaplen,
            LINKTYPE_ETHERNET,
        )
    ]
    rec = struct.Struct(bo + "IIII")
    for i, p in enumerate(c.packets):
        if fix_checksums:
            p = sync_record(p)
        elif not fields_consistent(p):
            raise InconsistentRecord(f"{c.origin_id or '<capture>'} packet {i}: fields disagree with header bytes")
        sec, usec = divmod(p.ts_micros, 1_000_000)
        chunks.append(rec.pack(sec, usec, len(p.header_bytes), p.total_len))
        chunks.append(p.header_bytes)
    return b"".join(chunks)


def save_capture(c: CaptureFile, path, fix_checksums: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_capture(c, fix_checksums=fix_checksums))
    return path


# --------------------------------------------------------------------------
# field mutation and checksums


def _ones_sum(data: bytes) -> int:
    if len(data) % 2:
        data = data + b"\x00"
    s = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return s


def ipv4_checksum(ip_header: bytes) -> int:
    """Checksum of an IPv4 header whose checksum field is zeroed."""
    return ~_ones_sum(ip_header) & 0xFFFF


def ipv4_checksum_ok(p: PacketRecord) -> bool:
    if not p.is_ipv4:
        return True
    return _ones_sum(p.header_bytes[ETH_LEN : ETH_LEN + p.ip_header_len]) == 0xFFFF


def _transport_sum(h: bytes) -> int:
    """Ones-complement sum of pseudo-header + transport header, checksum field excluded."""
    ihl = (h[ETH_LEN] & 0x0F) * 4
    l4 = ETH_LEN + ihl
    proto = h[ETH_LEN + 9]
    seg = bytearray(h[l4:])
    if proto == PROTO_TCP:
        seg[16:18] = b"\x00\x00"
        seg_len = int.from_bytes(h[ETH_LEN + 2 : ETH_LEN + 4], "big") - ihl
    else:
        seg[6:8] = b"\x00\x00"
        seg_len = int.from_bytes(seg[4:6], "big")
    pseudo = h[ETH_LEN + 12 : ETH_LEN + 20] + bytes([0, proto]) + (seg_len & 0xFFFF).to_bytes(2, "big")
    return _ones_sum(pseudo + bytes(seg))


def _checksum_offset(p: PacketRecord) -> int:
    return ETH_LEN + p.ip_header_len + (16 if p.is_tcp else 6)


def recompute_checksums(p: PacketRecord, original: Optional[PacketRecord] = None) -> PacketRecord:
    """Recompute the IPv4 header checksum and settle the transport checksum.

    The transport checksum covers payload that is not retained, so it cannot be
    recomputed from scratch. Without ``original`` it is zeroed. With ``original``
    (the same packet before mutation) it is updated incrementally from the
    header/pseudo-header difference, which stays exact for the unseen payload.
    """
    if not p.is_ipv4:
        return p
    h = bytearray(p.header_bytes)
    ihl = p.ip_header_len
    h[ETH_LEN + 10 : ETH_LEN + 12] = b"\x00\x00"
    h[ETH_LEN + 10 : ETH_LEN + 12] = ipv4_checksum(bytes(h[ETH_LEN : ETH_LEN + ihl])).to_bytes(2, "big")
    if p.src_port is not None:
        off = _checksum_offset(p)
        new = 0
        if original is not None and original.src_port is not None and original.protocol == p.protocol:
            ob = original.header_bytes
            old = int.from_bytes(ob[_checksum_offset(original) : _checksum_offset(original) + 2], "big")
            if p.is_udp and old == 0:
                new = 0
            else:
                x = (~old & 0xFFFF) + (~_transport_sum(ob) & 0xFFFF) + _transport_sum(bytes(h))
                while x >> 16:
                    x = (x & 0xFFFF) + (x >> 16)
                new = ~x & 0xFFFF
                if p.is_udp and new == 0:
                    new = 0xFFFF
        h[off : off + 2] = new.to_bytes(2, "big")
    return replace(p, header_bytes=bytes(h))


def replace_fields(p: PacketRecord, **changes) -> PacketRecord:
    """Return ``p`` with the given fields changed in both the record and its header bytes.

    Checksums are left stale; follow with :func:`recompute_checksums`.
    Changing ``tcp_data_offset`` resizes the TCP options (NOP padded or truncated).
    Changing ``total_len`` also rewrites the IPv4 total-length field.
    """
    unknown = set(changes) - set(HEADER_FIELDS) - {"total_len", "ts_micros"}
    if unknown:
        raise ValueError(f"cannot replace {sorted(unknown)}")
    h = bytearray(p.header_bytes)
    total_len = changes.get("total_len", p.total_len)

    def put(off, width, value):
        h[off : off + width] = int(value).to_bytes(width, "big")

    for name, off in (("dst_mac", 0), ("src_mac", 6)):
        if name in changes and changes[name] is not None:
            put(off, 6, changes[name])
    if p.is_ipv4:
        ip = ETH_LEN
        ihl = p.ip_header_len
        l4 = ip + ihl
        for name, off, width in (
            ("tos", 1, 1),
            ("ip_id", 4, 2),
            ("ttl", 8, 1),
            ("src_ip", 12, 4),
            ("dst_ip", 16, 4),
        ):
            if name in changes:
                put(ip + off, width, changes[name])
        if p.src_port is not None:
            if "src_port" in changes:
                put(l4, 2, changes["src_port"])
            if "dst_port" in changes:
                put(l4 + 2, 2, changes["dst_port"])
        if p.is_tcp:
            if "tcp_flags" in changes:
                put(l4 + 13, 1, changes["tcp_flags"])
            if "tcp_window" in changes:
                put(l4 + 14, 2, changes["tcp_window"])
            if "tcp_data_offset" in changes:
                doff = int(changes["tcp_data_offset"])
                if not 5 <= doff <= 15:
                    raise ValueError(f"tcp_data_offset {doff} outside [5, 15]")
                new_len = doff * 4
                tcp = h[l4:]
                tcp = tcp[:new_len] + b"\x01" * (new_len - len(tcp))
                tcp[12] = (doff << 4) | (tcp[12] & 0x0F)
                h = h[:l4] + tcp
        ip_total = int.from_bytes(h[ip + 2 : ip + 4], "big")
        if "total_len" in changes:
            ip_total = total_len - ETH_LEN
        ip_total = min(max(ip_total, len(h) - ETH_LEN), 0xFFFF)
        put(ip + 2, 2, ip_total)
        if p.is_udp and "total_len" in changes:
            # keep the UDP length aligned with the IP payload length
            put(l4 + 4, 2, max(ip_total - ihl, 8))
    total_len = max(int(total_len), len(h))
    hlen, decoded = decode_frame(bytes(h))
    assert hlen == len(h)
    return PacketRecord(
        ts_micros=changes.get("ts_micros", p.ts_micros),
        total_len=total_len,
        header_bytes=bytes(h),
        **decoded,
    )


def sync_record(p: PacketRecord) -> PacketRecord:
    """Rewrite header bytes from the record's fields and recompute checksums."""
    hlen, decoded = decode_frame(p.header_bytes)
    base = PacketRecord(ts_micros=p.ts_micros, total_len=p.total_len, header_bytes=p.header_bytes[:hlen], **decoded)
    changes = {k: getattr(p, k) for k in HEADER_FIELDS if getattr(p, k) != decoded.get(k) and k != "ethertype"}
    if p.total_len != base.total_len:
        changes["total_len"] = p.total_len
    rebuilt = replace_fields(base, **changes) if changes else base
    return recompute_checksums(rebuilt, original=base)


# --------------------------------------------------------------------------
# flows


class FiveTuple(NamedTuple):
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    protocol: int


@dataclass
class Flow:
    packet_count: int = 0
    byte_count: int = 0
    inter_arrival_micros: list = field(default_factory=list)
    packet_sizes: list = field(default_factory=list)
    timestamps: list = field(default_factory=list)


@dataclass
class FlowTable:
    flows: dict
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.flows)


def assemble_flows(c) -> FlowTable:
    """Group IPv4 TCP/UDP packets of one capture (or an iterable of packets) by directed 5-tuple."""
    packets = c.packets if isinstance(c, CaptureFile) else c
    flows: dict = {}
    skipped = 0
    for p in packets:
        key = p.five_tuple
        if key is None:
            skipped += 1
            continue
        f = flows.get(key)
        if f is None:
            f = flows[key] = Flow()
        if f.timestamps:
            f.inter_arrival_micros.append(p.ts_micros - f.timestamps[-1])
        f.timestamps.append(p.ts_micros)
        f.packet_count += 1
        f.byte_count += p.total_len
        f.packet_sizes.append(p.total_len)
    return FlowTable(flows=flows, skipped=skipped)


# --------------------------------------------------------------------------
# dataset preparation


def segment_capture(c: CaptureFile, max_packets: int = 2000, max_segments: int = 20, seed=0) -> list:
    if max_packets < 1 or max_segments < 1:
        raise ValueError("max_packets and max_segments must be >= 1")
    n = len(c.packets)
    if n <= max_packets:
        return [c]
    starts = list(range(0, n, max_packets))
    chosen = range(len(starts))
    if len(starts) > max_segments:
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(len(starts), size=max_segments, replace=False).tolist())
    return [
        replace(
            c,
            origin_id=f"{c.origin_id}#seg{i:03d}",
            packets=c.packets[starts[i] : starts[i] + max_packets],
            warnings=0,
        )
        for i in chosen
    ]


@dataclass
class DatasetSplit:
    training: list
    auxiliary: list
    non_training: list
    holdout_labels: list
    seed: int


def _group_by_label(corpus: Sequence[CaptureFile]) -> dict:
    groups = defaultdict(list)
    for c in corpus:
        groups[c.label].append(c)
    return dict(sorted(groups.items()))


def split_dataset(corpus: Sequence[CaptureFile], holdout_label_count: int = 2, per_label_cap: int = 60, seed=0) -> DatasetSplit:
    groups = _group_by_label(corpus)
    if len(groups) <= holdout_label_count:
        raise TooFewLabels(f"need more than {holdout_label_count} labels, got {len(groups)}")
    rng = np.random.default_rng(seed)
    for label, caps in groups.items():
        if len(caps) > per_label_cap:
            keep = sorted(rng.choice(len(caps), size=per_label_cap, replace=False).tolist())
            groups[label] = [caps[i] for i in keep]
    labels = list(groups)
    holdout = sorted(labels[i] for i in rng.choice(len(labels), size=holdout_label_count, replace=False))
    training, auxiliary, non_training = [], [], []
    for label, caps in groups.items():
        if label in holdout:
            non_training.extend(caps)
            continue
        perm = rng.permutation(len(caps))
        half = (len(caps) + 1) // 2
        training.extend(caps[i] for i in perm[:half])
        auxiliary.extend(caps[i] for i in perm[half:])
    return DatasetSplit(training, auxiliary, non_training, holdout, int(seed))


def prepare_dataset(
    raw_corpus: Sequence[CaptureFile],
    max_packets: int = 2000,
    max_segments: int = 20,
    holdout_label_count: int = 2,
    per_label_cap: int = 60,
    seed=0,
) -> DatasetSplit:
    """Segment every capture, then cap per label and split (cap applies to segments)."""
    segments = []
    for i, c in enumerate(raw_corpus):
        segments.extend(segment_capture(c, max_packets, max_segments, seed=[int(seed), i]))
    return split_dataset(segments, holdout_label_count, per_label_cap, seed)


# --------------------------------------------------------------------------
# manifests


def read_manifest(path) -> list:
    """Read a ``path,label`` CSV; relative paths resolve against the manifest's directory."""
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "label"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: manifest needs a 'path,label' header")
        for row in reader:
            p = Path(row["path"])
            rows.append((p if p.is_absolute() else path.parent / p, row["label"], row["path"]))
    return rows


def load_corpus(manifest) -> list:
    return [read_capture(p, label, origin_id=origin) for p, label, origin in read_manifest(manifest)]


def _safe_name(origin_id: str) -> str:
    name = origin_id.replace("\\", "/").split("/")[-1] or "capture"
    for ch in "#:?* ":
        name = name.replace(ch, "_")
    return name if name.endswith(".pcap") else name + ".pcap"


def save_corpus(corpus: Sequence[CaptureFile], out_dir, manifest_name: str = "manifest.csv", fix_checksums: bool = False) -> Path:
    """Write each capture as ``<name>.pcap`` plus a ``path,label`` manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    used = set()
    rows = []
    for c in corpus:
        name = _safe_name(c.origin_id)
        stem, k = name[:-5], 1
        while name in used:
            name = f"{stem}_{k}.pcap"
            k += 1
        used.add(name)
        save_capture(c, out_dir / name, fix_checksums=fix_checksums)
        rows.append((name, c.label))
    manifest = out_dir / manifest_name
    with manifest.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label"])
        w.writerows(rows)
    return manifest


def ip_to_str(ip: int) -> str:
    return ".".join(str((ip >> s) & 0xFF) for s in (24, 16, 8, 0))


def mac_to_str(mac: int) -> str:
    return ":".join(f"{(mac >> s) & 0xFF:02x}" for s in range(40, -1, -8))


def ip_from_str(s: str) -> int:
    a, b, c, d = (int(x) for x in s.split("."))
    return (a << 24) | (b << 16) | (c << 8) | d


def mac_from_str(s: str) -> int:
    return int(s.replace(":", "").replace("-", ""), 16)


def record_field_names() -> list:
    return [f.name for f in fields(PacketRecord)]
