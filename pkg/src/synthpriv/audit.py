"""Audit configuration, orchestration and report assembly."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .capture_io import ip_from_str, load_corpus, mac_from_str, save_corpus
from .errors import ConfigError, SynthPrivError
from .extraction import extraction_report, field_window_match_rate
from .identifiers import KINDS, collect_identifiers, frequency_stratified_memorization, identifier_report
from .mia import load_signals, overlap_signal_table, run_mia, MEMBER, NONMEMBER
from .mitigation import MitigationConfig, build_pseudonym_map, mitigate, write_pseudonym_map
from .properties import SENSITIVE_FIELDS, mean_emd, property_leakage_report
from .tokens import SCHEMES, build_corpus_index, tokenize
from .topology import topology_report
from .utility import fidelity_report, labeled_flows, load_labeled_flows, utility_delta

log = logging.getLogger(__name__)

SEED_ENV = "SYNTHPRIV_SEED"

# Ethernet dst/src MAC and IPv4 src/dst address byte spans within a header
IDENTIFIER_SPANS = ((0, 6), (6, 12), (26, 30), (30, 34))

# config-file key -> AuditConfig attribute
CONFIG_KEYS = {
    "paths.training": "training_manifest",
    "paths.generated": "generated_manifest",
    "paths.auxiliary": "auxiliary_manifest",
    "paths.non_training": "non_training_manifest",
    "paths.train_signals": "train_signals",
    "paths.target_signals": "target_signals",
    "paths.mitigated_generated": "mitigated_generated_manifest",
    "paths.output_dir": "output_dir",
    "tokens.scheme": "scheme",
    "extraction.n": "extraction_n",
    "identifiers.kinds": "identifier_kinds",
    "topology.k": "topology_k",
    "topology.kinds": "topology_kinds",
    "mia.kind": "mia_kind",
    "mia.fpr_cap": "fpr_cap",
    "mitigation.strategy": "mitigation_strategy",
    "mitigation.epsilon": "mitigation_epsilon",
    "mitigation.target_fields": "mitigation_fields",
    "mitigation.k_ip": "mitigation_k_ip",
    "mitigation.k_mac": "mitigation_k_mac",
    "mitigation.constant_ip": "mitigation_constant_ip",
    "mitigation.constant_mac": "mitigation_constant_mac",
    "mitigation.write_map": "mitigation_write_map",
    "utility.unmitigated_flows": "utility_unmitigated_flows",
    "utility.mitigated_flows": "utility_mitigated_flows",
    "utility.test_flows": "utility_test_flows",
    "run.seed": "seed",
}
PATH_ATTRS = {
    "training_manifest",
    "generated_manifest",
    "auxiliary_manifest",
    "non_training_manifest",
    "train_signals",
    "target_signals",
    "mitigated_generated_manifest",
    "utility_unmitigated_flows",
    "utility_mitigated_flows",
    "utility_test_flows",
}


@dataclass
class AuditConfig:
    training_manifest: Optional[str] = None
    generated_manifest: Optional[str] = None
    auxiliary_manifest: Optional[str] = None
    non_training_manifest: Optional[str] = None
    train_signals: Optional[str] = None
    target_signals: Optional[str] = None
    mitigated_generated_manifest: Optional[str] = None
    output_dir: str = "audit_out"
    scheme: str = "byte"
    extraction_n: int = 10
    identifier_kinds: tuple = KINDS
    topology_k: int = 100
    topology_kinds: tuple = ("ip", "mac")
    mia_kind: str = "threshold"
    fpr_cap: float = 0.01
    mitigation_strategy: Optional[str] = None
    mitigation_epsilon: float = 1.0
    mitigation_fields: tuple = SENSITIVE_FIELDS
    mitigation_k_ip: int = 8
    mitigation_k_mac: int = 12
    mitigation_constant_ip: str = "192.0.2.1"
    mitigation_constant_mac: str = "02:00:00:00:00:01"
    mitigation_write_map: bool = False
    utility_unmitigated_flows: Optional[str] = None
    utility_mitigated_flows: Optional[str] = None
    utility_test_flows: Optional[str] = None
    seed: Optional[int] = 0

    def mitigation_config(self) -> MitigationConfig:
        return MitigationConfig(
            strategy=self.mitigation_strategy,
            constant_ip=ip_from_str(self.mitigation_constant_ip),
            constant_mac=mac_from_str(self.mitigation_constant_mac),
            seed=self.seed,
            k_ip=self.mitigation_k_ip,
            k_mac=self.mitigation_k_mac,
            epsilon=self.mitigation_epsilon,
            target_fields=tuple(self.mitigation_fields),
        )

    def echo(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _coerce(attr: str, value):
    """Convert a config-file string to the attribute's type."""
    default = next(f.default for f in fields(AuditConfig) if f.name == attr)
    if not isinstance(value, str):
        return value
    value = value.strip()
    if isinstance(default, bool):
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {value!r}")
        return value.lower() in ("true", "1", "yes")
    if isinstance(default, tuple):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    if attr in ("extraction_n", "topology_k", "mitigation_k_ip", "mitigation_k_mac", "seed"):
        return int(value)
    if attr in ("fpr_cap", "mitigation_epsilon"):
        return float(value)
    return value or None


def parse_config_text(text: str, base_dir: Path = Path(".")) -> dict:
    """Parse ``section.key = value`` lines (``#`` comments) into AuditConfig kwargs."""
    out, problems = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems[f"line {lineno}"] = "expected 'key = value'"
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        attr = CONFIG_KEYS.get(key)
        if attr is None:
            problems[key] = "unknown key"
            continue
        try:
            v = _coerce(attr, value)
        except ValueError as e:
            problems[key] = str(e)
            continue
        if attr in PATH_ATTRS | {"output_dir"} and v and not Path(v).is_absolute():
            v = str(base_dir / v)
        out[attr] = v
    if problems:
        raise ConfigError(problems)
    return out


def load_config(path=None, overrides: Optional[dict] = None, env=None) -> AuditConfig:
    env = os.environ if env is None else env
    kwargs = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError({"config": f"{path} does not exist"})
        kwargs.update(parse_config_text(path.read_text(encoding="utf-8"), path.parent))
    for k, v in (overrides or {}).items():
        if v is not None:
            kwargs[k] = _coerce(k, v)
    if env.get(SEED_ENV):
        try:
            kwargs["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError({SEED_ENV: f"not an integer: {env[SEED_ENV]!r}"})
    return AuditConfig(**kwargs)


def validate_config(cfg: AuditConfig, need_generated: bool = True, need_mitigation: bool = False) -> None:
    problems = {}
    if not cfg.training_manifest:
        problems["paths.training"] = "required"
    if need_generated and not cfg.generated_manifest:
        problems["paths.generated"] = "required"
    for attr in PATH_ATTRS:
        v = getattr(cfg, attr)
        if v and not Path(v).exists():
            problems[attr] = f"{v} does not exist"
    if cfg.scheme not in SCHEMES:
        problems["tokens.scheme"] = f"must be one of {SCHEMES}"
    if cfg.extraction_n < 1:
        problems["extraction.n"] = "must be >= 1"
    if cfg.topology_k < 1:
        problems["topology.k"] = "must be >= 1"
    if cfg.mia_kind not in ("threshold", "logistic"):
        problems["mia.kind"] = "must be threshold or logistic"
    if not 0 <= cfg.fpr_cap <= 1:
        problems["mia.fpr_cap"] = "must be in [0, 1]"
    bad = set(cfg.identifier_kinds) - set(KINDS)
    if bad:
        problems["identifiers.kinds"] = f"unknown kinds {sorted(bad)}"
    bad = set(cfg.topology_kinds) - {"ip", "mac"}
    if bad:
        problems["topology.kinds"] = f"unknown kinds {sorted(bad)}"
    if bool(cfg.train_signals) != bool(cfg.target_signals):
        problems["paths.train_signals"] = "train_signals and target_signals go together"
    if cfg.seed is None:
        problems["run.seed"] = "required"
    if need_mitigation:
        if not cfg.mitigation_strategy:
            problems["mitigation.strategy"] = "required"
        else:
            try:
                cfg.mitigation_config()
            except (ValueError, SynthPrivError) as e:
                problems["mitigation"] = str(e)
    if problems:
        raise ConfigError(problems)


# --------------------------------------------------------------------------
# report


@dataclass
class AuditReport:
    sections: dict
    artifacts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.sections), sort_keys=True, indent=2) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


FRACTION_KEYS = {
    "auc", "tpr_at_fpr", "training_auc", "extractable_rate", "identifier_window_rate",
    "coverage", "confidence", "node_overlap", "edge_overlap", "node_coverage", "edge_coverage",
    "degree_emd", "emd_sa", "emd_da", "emd_sp", "emd_dp", "emd_pr", "mean_emd",
    "accuracy_mitigated", "accuracy_unmitigated",
} | set(SENSITIVE_FIELDS)


def check_fractions(obj, path="") -> None:
    """Raise if any known fraction-valued entry falls outside [0, 1]."""
    if isinstance(obj, dict):
        for k, v in obj.items():
            if k in ("deltas", "config"):
                continue
            if k in FRACTION_KEYS and isinstance(v, (int, float)) and not isinstance(v, bool):
                if not (0.0 <= v <= 1.0):
                    raise ValueError(f"{path}{k} = {v} outside [0, 1]")
            check_fractions(v, f"{path}{k}.")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            check_fractions(v, f"{path}{i}.")


def skipped(reason: str) -> dict:
    return {"status": "skipped", "reason": reason}


def _load(manifest) -> list:
    return load_corpus(manifest) if manifest else []


def audit_corpora(train, gen, cfg: AuditConfig, auxiliary=(), non_training=(), prefix: str = "") -> AuditReport:
    """All attack and fidelity metrics for one (training, generated) pair."""
    sections, artifacts = {}, {}

    # data extraction
    if not gen:
        sections["extraction"] = skipped("no generated corpus")
    else:
        train_seqs = [tokenize(c, cfg.scheme) for c in train]
        gen_seqs = [tokenize(c, cfg.scheme) for c in gen]
        idx = build_corpus_index(train_seqs, n=cfg.extraction_n, aligned=True)
        rep = extraction_report(gen_seqs, idx)
        matched, considered = field_window_match_rate(gen_seqs, train_seqs, IDENTIFIER_SPANS, cfg.extraction_n)
        curve_name = f"{prefix}extraction_positional.csv"
        sections["extraction"] = {
            "status": "ok",
            "scheme": cfg.scheme,
            "n": cfg.extraction_n,
            "extractable_rate": rep.extractable_rate,
            "n_generated": len(gen_seqs),
            "identifier_window_rate": matched / considered if considered else 0.0,
            "identifier_windows": considered,
            "positional_curve": curve_name,
        }
        artifacts[curve_name] = (["position", "rate"], rep.positional_rates)

    # identifiers
    ident = identifier_report(train, gen, cfg.identifier_kinds)
    for kind in cfg.identifier_kinds:
        t = collect_identifiers(train, kind)
        g = collect_identifiers(gen, kind)
        if t.counts:
            name = f"{prefix}memorization_{kind}.csv"
            artifacts[name] = (
                ["bin_low", "bin_high", "memorized", "non_memorized"],
                frequency_stratified_memorization(t, g),
            )
            ident[kind]["histogram"] = name
    sections["identifiers"] = {"status": "ok", **ident}

    props = property_leakage_report(train, gen)
    sections["properties"] = {"status": "ok", "fields": props, "mean_emd": mean_emd(props)}
    sections["topology"] = {"status": "ok", "k": cfg.topology_k,
                            **topology_report(train, gen, cfg.topology_kinds, cfg.topology_k)}
    try:
        fid = fidelity_report(train, gen)
        sections["fidelity"] = {"status": "ok", **fid.as_dict(), "mean_emd": fid.mean()}
    except SynthPrivError as e:
        sections["fidelity"] = skipped(str(e))

    sections["mia"] = _mia_section(cfg, gen, train, auxiliary, non_training, artifacts, prefix)
    return AuditReport(sections, artifacts)


def _mia_section(cfg, gen, train, auxiliary, non_training, artifacts, prefix) -> dict:
    if cfg.train_signals and cfg.target_signals:
        attack_train = load_signals(cfg.train_signals)
        target = load_signals(cfg.target_signals)
        source = "signal_csv"
    elif gen and auxiliary and len(non_training) >= 2:
        # black-box overlap signal; non-training captures split between attack training and target
        gidx = build_corpus_index([tokenize(c, cfg.scheme) for c in gen], n=cfg.extraction_n)
        perm = np.random.default_rng(cfg.seed).permutation(len(non_training))
        half = len(non_training) // 2
        nt_fit = [non_training[i] for i in perm[:half]]
        nt_tgt = [non_training[i] for i in perm[half:]]
        attack_train = overlap_signal_table(
            list(auxiliary) + nt_fit, [MEMBER] * len(auxiliary) + [NONMEMBER] * len(nt_fit), gidx, cfg.scheme
        )
        target = overlap_signal_table(
            list(train) + nt_tgt, [MEMBER] * len(train) + [NONMEMBER] * len(nt_tgt), gidx, cfg.scheme
        )
        source = "overlap_signal"
    else:
        return skipped("no signals")
    try:
        res = run_mia(attack_train, target, cfg.mia_kind, cfg.fpr_cap)
    except SynthPrivError as e:
        return skipped(str(e))
    curve = res.pop("curve")
    name = f"{prefix}roc.csv"
    artifacts[name] = (["fpr", "tpr"], list(zip(curve.fpr.tolist(), curve.tpr.tolist())))
    return {"status": "ok", "signal_source": source, **res, "roc_curve": name}


def _utility_section(cfg: AuditConfig, unmitigated=None, mitigated=None, test=None) -> dict:
    if cfg.utility_unmitigated_flows and cfg.utility_mitigated_flows and cfg.utility_test_flows:
        unmitigated = load_labeled_flows(cfg.utility_unmitigated_flows)
        mitigated = load_labeled_flows(cfg.utility_mitigated_flows)
        test = load_labeled_flows(cfg.utility_test_flows)
    if unmitigated is None or mitigated is None or test is None:
        return skipped("no labeled flow sets")
    if len(test[1]) == 0:
        return skipped("empty test flow set")
    try:
        return {"status": "ok", **utility_delta(unmitigated, mitigated, test, cfg.seed)}
    except SynthPrivError as e:
        return skipped(str(e))


def run_audit(cfg: AuditConfig) -> AuditReport:
    validate_config(cfg, need_generated=True)
    train = _load(cfg.training_manifest)
    gen = _load(cfg.generated_manifest)
    aux = _load(cfg.auxiliary_manifest)
    non_training = _load(cfg.non_training_manifest)
    rep = audit_corpora(train, gen, cfg, aux, non_training)
    rep.sections["utility"] = _utility_section(cfg)
    rep.sections = {"version": __version__, "config": cfg.echo(), **rep.sections}
    check_fractions(rep.sections)
    return rep


def _summary(sections: dict) -> dict:
    def ok(name):
        s = sections.get(name, {})
        return s if s.get("status") == "ok" else None

    mia, ext, props, fid = ok("mia"), ok("extraction"), ok("properties"), ok("fidelity")
    return {
        "mia_tpr": mia["tpr_at_fpr"] if mia else None,
        "extractable_rate": ext["extractable_rate"] if ext else None,
        "identifier_window_rate": ext["identifier_window_rate"] if ext else None,
        "property_emd": props["mean_emd"] if props else None,
        "fidelity_emd": fid["mean_emd"] if fid else None,
    }


def mitigation_deltas(baseline: dict, mitigated: dict, utility: Optional[dict] = None) -> dict:
    """Signed changes, mitigated minus baseline.

    Privacy columns: lower is better. Network properties and fidelity are
    reported as the negative change in EMD.
    """
    b, m = _summary(baseline), _summary(mitigated)

    def diff(key, negate=False):
        if b[key] is None or m[key] is None:
            return None
        d = m[key] - b[key]
        return -d if negate else d

    return {
        "mia": diff("mia_tpr"),
        "extraction": diff("extractable_rate"),
        "extraction_identifier_windows": diff("identifier_window_rate"),
        "network": diff("property_emd", negate=True),
        "fidelity": diff("fidelity_emd", negate=True),
        "task_accuracy": utility.get("delta") if utility and utility.get("status") == "ok" else None,
    }


def run_mitigation(cfg: AuditConfig, out_dir=None) -> tuple:
    """Mitigate the training corpus, write it out, and audit before/after.

    Without ``paths.mitigated_generated`` the mitigated corpus stands in for the
    output of a generator retrained on it, and without ``paths.generated`` the
    baseline generator is taken to reproduce its training data verbatim.
    Returns (mitigated corpus, AuditReport).
    """
    validate_config(cfg, need_generated=False, need_mitigation=True)
    out_dir = Path(out_dir or cfg.output_dir)
    mcfg = cfg.mitigation_config()
    train = _load(cfg.training_manifest)
    gen = _load(cfg.generated_manifest) or train
    aux = _load(cfg.auxiliary_manifest)
    non_training = _load(cfg.non_training_manifest)

    mitigated = mitigate(train, mcfg)
    mdir = out_dir / "mitigated"
    save_corpus(mitigated, mdir)
    (mdir / "mitigation.json").write_text(json.dumps(mcfg.manifest(), sort_keys=True, indent=2) + "\n")
    if mcfg.strategy == "PS" and cfg.mitigation_write_map:
        write_pseudonym_map(build_pseudonym_map(train, mcfg.seed), out_dir / "private" / "pseudonym_map.json")

    mitigated_gen = _load(cfg.mitigated_generated_manifest) or mitigated
    base = audit_corpora(train, gen, cfg, aux, non_training, prefix="baseline_")
    after = audit_corpora(train, mitigated_gen, cfg, aux, non_training, prefix="mitigated_")

    utility = _utility_section(cfg)
    if utility.get("status") != "ok" and aux:
        test = labeled_flows(aux)
        utility = _utility_section(cfg, labeled_flows(gen), labeled_flows(mitigated_gen), test)

    sections = {
        "version": __version__,
        "config": cfg.echo(),
        "baseline": base.sections,
        "mitigated": after.sections,
        "utility": utility,
        "mitigation": {
            "parameters": mcfg.manifest(),
            "mitigated_manifest": "mitigated/manifest.csv",
            "deltas": mitigation_deltas(base.sections, after.sections, utility),
        },
    }
    check_fractions(sections)
    return mitigated, AuditReport(sections, {**base.artifacts, **after.artifacts})


def write_report(report: AuditReport, out_dir, name: str = "report.json") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(report.to_json(), encoding="utf-8")
    for fname, (header, rows) in sorted(report.artifacts.items()):
        with (out_dir / fname).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows([repr(v) if isinstance(v, float) else v for v in row] for row in rows)
    return path

