"""Sensitive header-property leakage measured by normalized 1-D EMD."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .capture_io import assemble_flows
from .errors import DomainMismatch, NoSamplesForField

SENSITIVE_FIELDS = (
    "ttl",
    "ip_id",
    "tos",
    "tcp_window",
    "tcp_flags",
    "tcp_data_offset",
    "flow_size",
    "packet_size",
)

# type-level value ranges; None marks fields whose range comes from the data
FIELD_DOMAINS = {
    "ttl": (0, 255),
    "ip_id": (0, 65535),
    "tos": (0, 255),
    "tcp_window": (0, 65535),
    "tcp_flags": (0, 255),
    "tcp_data_offset": (5, 15),
    "flow_size": None,
    "packet_size": None,
}


@dataclass(frozen=True)
class EmpiricalDistribution:
    field: str
    support: tuple
    weights: tuple
    domain: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        s = np.asarray(self.support, dtype=float)
        if len(w) != len(s) or len(s) == 0:
            raise ValueError("support and weights must be non-empty and equal length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        if np.any(np.diff(s) <= 0):
            raise ValueError("support must be strictly increasing")
        lo, hi = self.domain
        if s[0] < lo or s[-1] > hi:
            raise ValueError(f"support outside domain {self.domain}")

    @classmethod
    def from_values(cls, field: str, values, domain) -> "EmpiricalDistribution":
        counts = Counter(values)
        if not counts:
            raise NoSamplesForField(f"no samples for {field}")
        support = sorted(counts)
        total = sum(counts.values())
        return cls(field, tuple(support), tuple(counts[v] / total for v in support), tuple(domain))


def field_values(corpus, field: str) -> list:
    if field == "flow_size":
        return [f.byte_count for c in corpus for f in assemble_flows(c).flows.values()]
    if field == "packet_size":
        return [p.total_len for c in corpus for p in c.packets]
    if field not in FIELD_DOMAINS:
        raise ValueError(f"unknown field {field!r}")
    return [v for c in corpus for p in c.packets if (v := getattr(p, field)) is not None]


def field_distribution(corpus, field: str, domain: Optional[tuple] = None) -> EmpiricalDistribution:
    values = field_values(corpus, field)
    if not values:
        raise NoSamplesForField(f"corpus has no samples for {field}")
    if domain is None:
        domain = FIELD_DOMAINS[field] or (0, max(values))
    return EmpiricalDistribution.from_values(field, values, domain)


def emd_1d(xa, wa, xb, wb) -> float:
    """Wasserstein-1 distance between two weighted point sets on the line (CDF integral)."""
    xa, wa, xb, wb = (np.asarray(v, dtype=float) for v in (xa, wa, xb, wb))
    grid = np.union1d(xa, xb)
    if len(grid) < 2:
        return 0.0
    cdf_a = np.cumsum(np.bincount(np.searchsorted(grid, xa), weights=wa, minlength=len(grid)))
    cdf_b = np.cumsum(np.bincount(np.searchsorted(grid, xb), weights=wb, minlength=len(grid)))
    return float(np.sum(np.abs(cdf_a - cdf_b)[:-1] * np.diff(grid)))


def normalized_emd(a: EmpiricalDistribution, b: EmpiricalDistribution) -> float:
    if a.field != b.field:
        raise DomainMismatch(f"field mismatch: {a.field} vs {b.field}")
    if tuple(a.domain) != tuple(b.domain):
        raise DomainMismatch(f"{a.field}: domains differ {a.domain} vs {b.domain}")
    width = a.domain[1] - a.domain[0]
    if width <= 0:
        return 0.0
    return min(1.0, emd_1d(a.support, a.weights, b.support, b.weights) / width)


def property_leakage_report(train, gen, fields: Sequence[str] = SENSITIVE_FIELDS) -> dict:
    """Normalized EMD per sensitive field; ``None`` where either corpus lacks the field."""
    out = {}
    for f in fields:
        tv, gv = field_values(train, f), field_values(gen, f)
        if not tv or not gv:
            out[f] = None
            continue
        domain = FIELD_DOMAINS[f] or (0, max(max(tv), max(gv)))
        a = EmpiricalDistribution.from_values(f, tv, domain)
        b = EmpiricalDistribution.from_values(f, gv, domain)
        out[f] = normalized_emd(a, b)
    return out


def mean_emd(report: dict) -> Optional[float]:
    vals = [v for v in report.values() if v is not None]
    return float(np.mean(vals)) if vals else None


def write_table_csv(reports: dict, path) -> Path:
    """Rows are fields, columns are corpus pairs; missing values render as ``-``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(reports)
    fields = [f for f in SENSITIVE_FIELDS if any(f in r for r in reports.values())]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["field", *cols])
        for f in fields:
            w.writerow([f, *("-" if reports[c].get(f) is None else f"{reports[c][f]:.6f}" for c in cols)])
    return path
