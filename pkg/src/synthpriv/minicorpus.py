"""Deterministic synthetic mini corpus (~5,000 packets over 5 labels).

Frames carry valid IPv4 checksums and transport checksums computed over a
zero-filled payload of the advertised length, so mitigation outputs can be
checked for checksum validity and for byte-exact reversibility.
"""

from __future__ import annotations

import struct

import numpy as np

from .capture_io import (
    ETHERTYPE_ARP,
    ETHERTYPE_IPV4,
    PROTO_TCP,
    PROTO_UDP,
    CaptureFile,
    _ones_sum,
    ipv4_checksum,
    record_from_frame,
)

LABELS = ("camera", "dns", "streaming", "voip", "web")
CAPTURES_PER_LABEL = 4
PACKETS_PER_CAPTURE = 250

TCP_FLAG_SYN = 0x02
TCP_FLAG_ACK = 0x10
TCP_FLAG_PSH = 0x08
TCP_FLAG_FIN = 0x01


def eth_header(dst_mac: int, src_mac: int, ethertype: int) -> bytes:
    return dst_mac.to_bytes(6, "big") + src_mac.to_bytes(6, "big") + ethertype.to_bytes(2, "big")


def ipv4_header(src_ip, dst_ip, proto, total_length, ttl=64, ip_id=0, tos=0, options=b"") -> bytes:
    ihl = 5 + len(options) // 4
    h = bytearray(
        struct.pack("!BBHHHBBH4s4s", (4 << 4) | ihl, tos, total_length, ip_id, 0x4000, ttl, proto, 0,
                    src_ip.to_bytes(4, "big"), dst_ip.to_bytes(4, "big"))
        + options
    )
    h[10:12] = ipv4_checksum(bytes(h)).to_bytes(2, "big")
    return bytes(h)


def _l4_checksum(src_ip, dst_ip, proto, segment: bytes, payload_len: int) -> int:
    seg_len = len(segment) + payload_len
    pseudo = src_ip.to_bytes(4, "big") + dst_ip.to_bytes(4, "big") + bytes([0, proto]) + seg_len.to_bytes(2, "big")
    c = ~_ones_sum(pseudo + segment) & 0xFFFF  # zero payload adds nothing to the sum
    return c


def tcp_frame(src_mac, dst_mac, src_ip, dst_ip, sport, dport, *, seq=0, ack=0, flags=TCP_FLAG_ACK,
              window=65535, payload_len=0, ttl=64, ip_id=0, tos=0, options=b"") -> tuple[bytes, int]:
    """Return (header-only frame, on-wire length)."""
    doff = 5 + len(options) // 4
    tcp = bytearray(struct.pack("!HHIIBBHHH", sport, dport, seq, ack, doff << 4, flags, window, 0, 0) + options)
    tcp[16:18] = _l4_checksum(src_ip, dst_ip, PROTO_TCP, bytes(tcp), payload_len).to_bytes(2, "big")
    ip = ipv4_header(src_ip, dst_ip, PROTO_TCP, 20 + len(tcp) + payload_len, ttl, ip_id, tos)
    frame = eth_header(dst_mac, src_mac, ETHERTYPE_IPV4) + ip + bytes(tcp)
    return frame, max(len(frame) + payload_len, 60)


def udp_frame(src_mac, dst_mac, src_ip, dst_ip, sport, dport, *, payload_len=0, ttl=64, ip_id=0, tos=0) -> tuple[bytes, int]:
    udp = bytearray(struct.pack("!HHHH", sport, dport, 8 + payload_len, 0))
    ck = _l4_checksum(src_ip, dst_ip, PROTO_UDP, bytes(udp), payload_len)
    udp[6:8] = (ck or 0xFFFF).to_bytes(2, "big")
    ip = ipv4_header(src_ip, dst_ip, PROTO_UDP, 28 + payload_len, ttl, ip_id, tos)
    frame = eth_header(dst_mac, src_mac, ETHERTYPE_IPV4) + ip + bytes(udp)
    return frame, max(len(frame) + payload_len, 60)


def icmp_frame(src_mac, dst_mac, src_ip, dst_ip, *, ttl=64, ip_id=0) -> tuple[bytes, int]:
    body = bytes([8, 0, 0, 0, 0, 1, 0, 1])
    ip = ipv4_header(src_ip, dst_ip, 1, 20 + len(body), ttl, ip_id)
    frame = eth_header(dst_mac, src_mac, ETHERTYPE_IPV4) + ip + body
    return frame, 60


def arp_frame(src_mac, src_ip, target_ip) -> tuple[bytes, int]:
    body = struct.pack("!HHBBH6s4s6s4s", 1, ETHERTYPE_IPV4, 6, 4, 1, src_mac.to_bytes(6, "big"),
                       src_ip.to_bytes(4, "big"), bytes(6), target_ip.to_bytes(4, "big"))
    frame = eth_header(0xFFFFFFFFFFFF, src_mac, ETHERTYPE_ARP) + body
    return frame, 60


_PROFILES = {
    # (server ports, transport, payload range, ttl choices, window choices, tos)
    "camera": ((554, 8000), "tcp", (200, 1400), (64,), (14600, 29200), 0),
    "dns": ((53,), "udp", (30, 200), (64, 128), (0,), 0),
    "streaming": ((443,), "tcp", (800, 1460), (57, 64), (65535, 64240), 0x20),
    "voip": ((5060, 16384), "udp", (60, 220), (128,), (0,), 0xB8),
    "web": ((80, 443), "tcp", (0, 1200), (64, 128), (64240, 8192, 65535), 0),
}


def _host_pool(rng, label_idx: int, n: int):
    """LAN hosts for one label; OUIs and /24s overlap across labels on purpose."""
    ouis = (0x001A2B, 0x3C5A37, 0xB827EB)
    hosts = []
    for i in range(n):
        oui = ouis[(label_idx + i) % len(ouis)]
        mac = (oui << 24) | int(rng.integers(0, 1 << 24))
        ip = (192 << 24) | (168 << 16) | ((label_idx % 3) << 8) | int(rng.integers(2, 250))
        hosts.append((mac, ip))
    return hosts


def build_capture(label: str, index: int, seed: int = 0, n_packets: int = PACKETS_PER_CAPTURE) -> CaptureFile:
    label_idx = LABELS.index(label) if label in LABELS else 0
    rng = np.random.default_rng([seed, label_idx, index])
    ports, transport, (plo, phi), ttls, windows, tos = _PROFILES.get(label, _PROFILES["web"])
    gw_mac = 0x00005E0001FE
    clients = _host_pool(rng, label_idx, 3)
    servers = [(gw_mac, (int(rng.integers(1, 224)) << 24) | int(rng.integers(0, 1 << 24))) for _ in range(4)]
    t = 1_600_000_000_000_000 + label_idx * 10**9 + index * 10**7
    ip_ids = {ip: int(rng.integers(0, 65536)) for _, ip in clients + servers}
    records = []
    n_flows = int(rng.integers(3, 7))
    flows = []
    for _ in range(n_flows):
        cmac, cip = clients[int(rng.integers(len(clients)))]
        smac, sip = servers[int(rng.integers(len(servers)))]
        flows.append((cmac, cip, smac, sip, int(rng.integers(32768, 61000)), int(rng.choice(ports)),
                       int(rng.choice(ttls)), int(rng.choice(windows))))
    while len(records) < n_packets:
        t += int(rng.exponential(2_000)) + 1
        roll = rng.random()
        if roll < 0.02:
            cmac, cip = clients[int(rng.integers(len(clients)))]
            frame, wire = arp_frame(cmac, cip, (cip & 0xFFFFFF00) | 1)
        elif roll < 0.04:
            cmac, cip = clients[int(rng.integers(len(clients)))]
            frame, wire = icmp_frame(cmac, gw_mac, cip, servers[0][1], ttl=int(rng.choice(ttls)))
        else:
            cmac, cip, smac, sip, cport, sport, ttl, win = flows[int(rng.integers(len(flows)))]
            outbound = rng.random() < 0.45
            src = (cmac, cip, cport) if outbound else (smac, sip, sport)
            dst = (smac, sip, sport) if outbound else (cmac, cip, cport)
            ip_ids[src[1]] = (ip_ids[src[1]] + 1) & 0xFFFF
            plen = int(rng.integers(plo, phi + 1))
            pkt_ttl = ttl if outbound else int(rng.choice((48, 52, 56, 116)))
            if transport == "tcp":
                flags = TCP_FLAG_ACK | (TCP_FLAG_PSH if plen else 0)
                if rng.random() < 0.03:
                    flags = TCP_FLAG_SYN
                opts = b"\x01\x01\x08\x0a" + int(rng.integers(0, 1 << 32)).to_bytes(4, "big") + bytes(4) if rng.random() < 0.3 else b""
                frame, wire = tcp_frame(src[0], dst[0], src[1], dst[1], src[2], dst[2],
                                        seq=int(rng.integers(0, 1 << 32)), ack=int(rng.integers(0, 1 << 32)),
                                        flags=flags, window=win, payload_len=plen, ttl=pkt_ttl,
                                        ip_id=ip_ids[src[1]], tos=tos, options=opts)
            else:
                frame, wire = udp_frame(src[0], dst[0], src[1], dst[1], src[2], dst[2], payload_len=plen,
                                        ttl=pkt_ttl, ip_id=ip_ids[src[1]], tos=tos)
        records.append(record_from_frame(t, frame, wire))
    return CaptureFile(label=label, origin_id=f"{label}_{index:02d}.pcap", packets=tuple(records))


def build_mini_corpus(seed: int = 0, labels=LABELS, per_label: int = CAPTURES_PER_LABEL,
                      n_packets: int = PACKETS_PER_CAPTURE) -> list:
    return [build_capture(label, i, seed, n_packets) for label in labels for i in range(per_label)]
