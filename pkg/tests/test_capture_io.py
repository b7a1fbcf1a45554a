import io
import random
import struct
from collections import Counter

import dpkt
import pytest
from hypothesis import given, strategies as st

from synthpriv.capture_io import (
    CaptureFile,
    PacketRecord,
    assemble_flows,
    ipv4_checksum_ok,
    load_corpus,
    parse_capture,
    prepare_dataset,
    read_manifest,
    record_from_frame,
    replace_fields,
    save_corpus,
    segment_capture,
    split_dataset,
    write_capture,
)
from synthpriv.errors import BadMagic, InconsistentRecord, TooFewLabels, TruncatedHeader, UnsupportedLinkType
from synthpriv.minicorpus import build_capture, tcp_frame, udp_frame

MAC_A, MAC_B = 0x001122334455, 0x66778899AABB
IP_A, IP_B, IP_C = 0x0A000001, 0x0A000002, 0x0A000003


def dpkt_tcp(src, dst, sport, dport, ttl=64, payload=b"", flags=dpkt.tcp.TH_ACK):
    tcp = dpkt.tcp.TCP(sport=sport, dport=dport, flags=flags, win=1024, data=payload)
    ip = dpkt.ip.IP(src=src.to_bytes(4, "big"), dst=dst.to_bytes(4, "big"), ttl=ttl, p=dpkt.ip.IP_PROTO_TCP, data=tcp)
    eth = dpkt.ethernet.Ethernet(src=MAC_A.to_bytes(6, "big"), dst=MAC_B.to_bytes(6, "big"),
                                 type=dpkt.ethernet.ETH_TYPE_IP, data=ip)
    return bytes(eth)


def dpkt_arp():
    arp = dpkt.arp.ARP(sha=MAC_A.to_bytes(6, "big"), spa=IP_A.to_bytes(4, "big"), tpa=IP_B.to_bytes(4, "big"),
                       op=dpkt.arp.ARP_OP_REQUEST)
    eth = dpkt.ethernet.Ethernet(src=MAC_A.to_bytes(6, "big"), dst=b"\xff" * 6, type=dpkt.ethernet.ETH_TYPE_ARP, data=arp)
    return bytes(eth)


def dpkt_pcap(frames, big_endian=False):
    buf = io.BytesIO()
    w = dpkt.pcap.Writer(buf, nano=False)
    if big_endian:
        # dpkt writes host order; build a big-endian file by hand instead
        out = [struct.pack(">IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)]
        for ts, f in frames:
            out.append(struct.pack(">IIII", int(ts), int(round((ts % 1) * 1e6)), len(f), len(f)) + f)
        return b"".join(out)
    for ts, f in frames:
        w.writepkt(f, ts=ts)
    return buf.getvalue()


def test_single_tcp_packet_ttl():
    frame = dpkt_tcp(IP_A, IP_B, 1234, 80, ttl=0x40, payload=b"\x00" * 6)
    assert len(frame) == 60
    c = parse_capture(dpkt_pcap([(1.0, frame)]), "x")
    assert len(c.packets) == 1
    p = c.packets[0]
    assert p.ttl == 64 and p.total_len == 60 and len(p.header_bytes) == 54
    assert (p.src_port, p.dst_port, p.protocol) == (1234, 80, 6)


def test_empty_pcap_roundtrip():
    raw = dpkt_pcap([])
    c = parse_capture(raw, "x")
    assert c.packets == ()
    assert len(write_capture(c)) == 24


def test_three_packet_capture_matches_dpkt():
    frames = [(1.0, dpkt_tcp(IP_A, IP_B, 1000, 443)), (1.5, dpkt_arp()), (2.25, dpkt_tcp(IP_B, IP_A, 443, 1000, ttl=57))]
    raw = dpkt_pcap(frames)
    c = parse_capture(raw, "lab")
    assert len(c.packets) == 3
    for (ts, f), p, (dts, dbuf) in zip(frames, c.packets, dpkt.pcap.Reader(io.BytesIO(raw))):
        eth = dpkt.ethernet.Ethernet(dbuf)
        assert p.ts_micros == round(dts * 1e6)
        assert p.src_mac == int.from_bytes(eth.src, "big") and p.dst_mac == int.from_bytes(eth.dst, "big")
        assert p.ethertype == eth.type
        if isinstance(eth.data, dpkt.ip.IP):
            ip = eth.data
            assert (p.src_ip, p.dst_ip) == (int.from_bytes(ip.src, "big"), int.from_bytes(ip.dst, "big"))
            assert (p.ttl, p.ip_id, p.tos, p.protocol) == (ip.ttl, ip.id, ip.tos, ip.p)
            tcp = ip.data
            assert (p.src_port, p.dst_port, p.tcp_flags, p.tcp_window) == (tcp.sport, tcp.dport, tcp.flags, tcp.win)
            assert p.tcp_data_offset == tcp.off
        else:
            assert p.src_ip is None and p.ttl is None and p.src_port is None and p.protocol is None
    assert write_capture(c) == raw


def test_big_endian_magic():
    frame = dpkt_tcp(IP_A, IP_B, 1, 2)
    c = parse_capture(dpkt_pcap([(3.0, frame)], big_endian=True), "x")
    assert c.pcap.byte_order == ">"
    assert c.packets[0].ts_micros == 3_000_000
    assert parse_capture(write_capture(c), "x") == c


def test_header_errors():
    with pytest.raises(TruncatedHeader):
        parse_capture(b"\xd4\xc3\xb2\xa1" + bytes(10), "x")
    with pytest.raises(BadMagic):
        parse_capture(bytes(24), "x")
    with pytest.raises(UnsupportedLinkType):
        parse_capture(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 101), "x")


def test_truncated_trailing_record_warns():
    raw = dpkt_pcap([(1.0, dpkt_tcp(IP_A, IP_B, 1, 2)), (2.0, dpkt_tcp(IP_A, IP_B, 1, 2))])
    c = parse_capture(raw[:-10], "x")
    assert len(c.packets) == 1 and c.warnings == 1


def test_timestamp_sort_is_stable():
    f1, f2, f3 = (dpkt_tcp(IP_A, IP_B, s, 80) for s in (1, 2, 3))
    c = parse_capture(dpkt_pcap([(5.0, f1), (1.0, f2), (5.0, f3)]), "x")
    assert [p.src_port for p in c.packets] == [2, 1, 3]


def test_inconsistent_record_rejected():
    c = parse_capture(dpkt_pcap([(1.0, dpkt_tcp(IP_A, IP_B, 1, 2))]), "x")
    p = c.packets[0]
    bad = c.with_packets([PacketRecord(**{**p.__dict__, "ttl": 1})])
    with pytest.raises(InconsistentRecord):
        write_capture(bad)
    fixed = parse_capture(write_capture(bad, fix_checksums=True), "x")
    assert fixed.packets[0].ttl == 1 and ipv4_checksum_ok(fixed.packets[0])


def test_mini_corpus_parses_cleanly(mini_corpus):
    for c in mini_corpus:
        back = parse_capture(write_capture(c), c.label, c.origin_id)
        assert back == c and back.warnings == 0
        assert all(ipv4_checksum_ok(p) for p in c.packets)


def test_mini_corpus_readable_by_dpkt(mini_corpus):
    c = mini_corpus[0]
    for (ts, buf), p in zip(dpkt.pcap.Reader(io.BytesIO(write_capture(c))), c.packets):
        eth = dpkt.ethernet.Ethernet(buf)
        if p.is_ipv4:
            assert isinstance(eth.data, dpkt.ip.IP)
            assert int.from_bytes(eth.data.src, "big") == p.src_ip


# flows


def _packet(src, dst, sport, dport, ts, proto="tcp", size=100):
    build = tcp_frame if proto == "tcp" else udp_frame
    frame, _ = build(MAC_A, MAC_B, src, dst, sport, dport)
    return record_from_frame(ts, frame, size)


def test_flows_directional():
    pk = [_packet(IP_A, IP_B, 1, 2, 0), _packet(IP_A, IP_B, 1, 2, 10), _packet(IP_B, IP_A, 2, 1, 20)]
    ft = assemble_flows(CaptureFile("x", "x", tuple(pk)))
    assert sorted(f.packet_count for f in ft.flows.values()) == [1, 2]
    fwd = next(f for k, f in ft.flows.items() if k.src_ip == IP_A)
    assert fwd.inter_arrival_micros == [10]


def test_single_packet_flow():
    ft = assemble_flows([_packet(IP_A, IP_B, 1, 2, 0)])
    (f,) = ft.flows.values()
    assert f.packet_count == 1 and f.inter_arrival_micros == []


def test_flow_counts_match_naive_tally():
    rng = random.Random(7)
    tuples = [(rng.choice([IP_A, IP_B, IP_C]), rng.choice([IP_A, IP_B]), rng.randrange(1, 9), rng.randrange(1, 9),
               rng.choice(["tcp", "udp"])) for _ in range(7)]
    pk = []
    tally = Counter()
    for t in range(100):
        s, d, sp, dp, proto = rng.choice(tuples)
        pk.append(_packet(s, d, sp, dp, t, proto))
        tally[(s, d, sp, dp, 6 if proto == "tcp" else 17)] += 1
    ft = assemble_flows(pk)
    assert {tuple(k): f.packet_count for k, f in ft.flows.items()} == dict(tally)


def test_flow_invariants_on_mini_corpus(mini_corpus):
    for c in mini_corpus:
        ft = assemble_flows(c)
        flow_pk = [p for p in c.packets if p.is_ipv4 and (p.is_tcp or p.is_udp)]
        assert sum(f.packet_count for f in ft.flows.values()) == len(flow_pk)
        assert sum(f.byte_count for f in ft.flows.values()) == sum(p.total_len for p in flow_pk)
        assert ft.skipped == len(c.packets) - len(flow_pk)
        assert all(len(f.inter_arrival_micros) == f.packet_count - 1 for f in ft.flows.values())


# segmentation and splitting


def _synthetic_capture(n, label="x", origin="o"):
    frame, _ = tcp_frame(MAC_A, MAC_B, IP_A, IP_B, 1, 2)
    p = record_from_frame(0, frame, 60)
    return CaptureFile(label, origin, tuple(PacketRecord(**{**p.__dict__, "ts_micros": i}) for i in range(n)))


def test_segment_sizes():
    segs = segment_capture(_synthetic_capture(5000))
    assert [len(s) for s in segs] == [2000, 2000, 1000]
    assert [s.packets[0].ts_micros for s in segs] == [0, 2000, 4000]
    assert len({s.origin_id for s in segs}) == 3


def test_segment_small_capture_unchanged():
    c = _synthetic_capture(50)
    assert segment_capture(c) == [c]


def test_segment_large_capture_sampled():
    c = _synthetic_capture(100_000)
    a = segment_capture(c, seed=3)
    b = segment_capture(c, seed=3)
    assert len(a) == 20 and all(len(s) <= 2000 for s in a)
    assert [s.origin_id for s in a] == [s.origin_id for s in b]
    starts = [s.packets[0].ts_micros for s in a]
    assert starts == sorted(starts) and all(x % 2000 == 0 for x in starts)
    assert [s.origin_id for s in segment_capture(c, seed=4)] != [s.origin_id for s in a]


def _labeled_corpus(labels, per_label, n=3):
    return [_synthetic_capture(n, lab, f"{lab}_{i}") for lab in labels for i in range(per_label)]


def test_split_arithmetic():
    s = split_dataset(_labeled_corpus("abcd", 10), seed=1)
    assert len(s.non_training) == 20 and len(s.training) == 10 and len(s.auxiliary) == 10
    assert len(s.holdout_labels) == 2
    assert all(c.label in s.holdout_labels for c in s.non_training)
    for lab in set("abcd") - set(s.holdout_labels):
        assert sum(c.label == lab for c in s.training) == 5
        assert sum(c.label == lab for c in s.auxiliary) == 5


def test_split_cap():
    corpus = _labeled_corpus("a", 100) + _labeled_corpus("bc", 5)
    s = split_dataset(corpus, holdout_label_count=2, seed=0)
    assert sum(1 for part in (s.training, s.auxiliary, s.non_training) for c in part if c.label == "a") == 60


def test_split_errors_and_determinism():
    with pytest.raises(TooFewLabels):
        split_dataset(_labeled_corpus("ab", 3))
    corpus = _labeled_corpus("abcde", 7)
    assert split_dataset(corpus, seed=9) == split_dataset(corpus, seed=9)


@given(st.lists(st.integers(1, 9), min_size=3, max_size=6), st.integers(0, 2**32 - 1))
def test_split_partitions(sizes, seed):
    corpus = [c for i, n in enumerate(sizes) for c in _labeled_corpus([f"L{i}"], n, n=1)]
    s = split_dataset(corpus, holdout_label_count=2, per_label_cap=6, seed=seed)
    ids = [c.origin_id for part in (s.training, s.auxiliary, s.non_training) for c in part]
    assert len(ids) == len(set(ids)) == sum(min(n, 6) for n in sizes)
    for lab in {c.label for c in s.training + s.auxiliary}:
        assert abs(sum(c.label == lab for c in s.training) - sum(c.label == lab for c in s.auxiliary)) <= 1
    assert not {c.label for c in s.training + s.auxiliary} & set(s.holdout_labels)


def test_prepare_dataset_segments_before_capping():
    corpus = [_synthetic_capture(4500, lab, f"{lab}_0") for lab in "abc"]
    s = prepare_dataset(corpus, holdout_label_count=1, seed=0)
    assert len(s.training) + len(s.auxiliary) + len(s.non_training) == 9


def test_manifest_roundtrip(tmp_path, mini_corpus):
    manifest = save_corpus(mini_corpus[:3], tmp_path)
    rows = read_manifest(manifest)
    assert [r[1] for r in rows] == [c.label for c in mini_corpus[:3]]
    back = load_corpus(manifest)
    assert [c.packets for c in back] == [c.packets for c in mini_corpus[:3]]


def test_replace_fields_rewrites_bytes():
    c = build_capture("web", 0, n_packets=30)
    p = next(p for p in c.packets if p.is_tcp)
    q = replace_fields(p, ttl=3, tcp_window=77, tcp_data_offset=7)
    assert (q.ttl, q.tcp_window, q.tcp_data_offset) == (3, 77, 7)
    assert len(q.header_bytes) == 14 + 20 + 28
    assert q.src_ip == p.src_ip and q.ip_id == p.ip_id
