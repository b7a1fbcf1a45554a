"""Communication graphs from the heaviest address pairs, and graph-to-graph comparison."""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .errors import BothEmpty, EmptyGraph
from .properties import emd_1d

_ENDPOINTS = {"ip": ("src_ip", "dst_ip"), "mac": ("src_mac", "dst_mac")}


@dataclass
class CommGraph:
    kind: str
    nodes: set = field(default_factory=set)
    edges: set = field(default_factory=set)
    built_from: int = 0

    def degrees(self) -> dict:
        """Edge-incidence count per node; a self-loop counts once."""
        deg = Counter({n: 0 for n in self.nodes})
        for a, b in self.edges:
            deg[a] += 1
            if b != a:
                deg[b] += 1
        return dict(deg)


def _pair(a: int, b: int) -> tuple:
    return (a, b) if a <= b else (b, a)


def top_flows(corpus, kind: str = "ip", k: int = 100) -> list:
    """Unordered address pairs ranked by total bytes (both directions merged)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    src, dst = _ENDPOINTS[kind]
    totals = defaultdict(int)
    for c in corpus:
        for p in c.packets:
            a, b = getattr(p, src), getattr(p, dst)
            if a is None or b is None:
                continue
            totals[_pair(a, b)] += p.total_len
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def build_graph(ranked, kind: str = "ip") -> CommGraph:
    g = CommGraph(kind=kind, built_from=len(ranked))
    for (a, b), _ in ranked:
        g.nodes.update((a, b))
        g.edges.add(_pair(a, b))
    return g


def _jaccard(x: set, y: set, what: str) -> float:
    union = x | y
    if not union:
        raise BothEmpty(f"both graphs have no {what}")
    return len(x & y) / len(union)


def node_overlap(g1: CommGraph, g2: CommGraph) -> float:
    return _jaccard(g1.nodes, g2.nodes, "nodes")


def edge_overlap(g1: CommGraph, g2: CommGraph) -> float:
    return _jaccard(g1.edges, g2.edges, "edges")


def node_coverage(train: CommGraph, gen: CommGraph) -> float:
    """Share of the training graph's nodes present in the generated graph."""
    if not train.nodes:
        raise EmptyGraph("training graph is empty")
    return len(train.nodes & gen.nodes) / len(train.nodes)


def edge_coverage(train: CommGraph, gen: CommGraph) -> float:
    if not train.edges:
        raise EmptyGraph("training graph is empty")
    return len(train.edges & gen.edges) / len(train.edges)


def degree_histogram(g: CommGraph) -> tuple:
    counts = Counter(g.degrees().values())
    support = sorted(counts)
    total = sum(counts.values())
    return support, [counts[d] / total for d in support]


def degree_distribution_emd(g1: CommGraph, g2: CommGraph) -> float:
    if not g1.nodes or not g2.nodes:
        raise EmptyGraph("degree EMD needs two non-empty graphs")
    s1, w1 = degree_histogram(g1)
    s2, w2 = degree_histogram(g2)
    width = max(s1[-1], s2[-1])
    if width == 0:
        return 0.0
    return min(1.0, emd_1d(s1, w1, s2, w2) / width)


def topology_report(train_corpus, gen_corpus, kinds=("ip", "mac"), k: int = 100) -> dict:
    out = {}
    for kind in kinds:
        gt = build_graph(top_flows(train_corpus, kind, k), kind)
        gg = build_graph(top_flows(gen_corpus, kind, k), kind)
        if not gt.nodes or not gg.nodes:
            out[kind] = {"skipped": "empty graph"}
            continue
        out[kind] = {
            "n_train_nodes": len(gt.nodes),
            "n_gen_nodes": len(gg.nodes),
            "node_overlap": node_overlap(gt, gg),
            "edge_overlap": edge_overlap(gt, gg),
            "node_coverage": node_coverage(gt, gg),
            "edge_coverage": edge_coverage(gt, gg),
            "degree_emd": degree_distribution_emd(gt, gg),
        }
    return out


def write_edge_list(g: CommGraph, path, fmt=str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b"])
        w.writerows((fmt(a), fmt(b)) for a, b in sorted(g.edges))
    return path
