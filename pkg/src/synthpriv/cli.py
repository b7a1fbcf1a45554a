"""Command-line entry point: ``synthpriv {split,audit,mitigate,mia,report}``.

Exit codes: 0 success, 2 configuration error, 1 any other failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .audit import load_config, run_audit, run_mitigation, write_report
from .capture_io import load_corpus, prepare_dataset, save_corpus
from .errors import ConfigError
from .mia import load_signals, run_mia, write_roc_csv

log = logging.getLogger("synthpriv")

# CLI flag -> AuditConfig attribute
FLAG_ATTRS = {
    "training": "training_manifest",
    "generated": "generated_manifest",
    "auxiliary": "auxiliary_manifest",
    "non_training": "non_training_manifest",
    "train_signals": "train_signals",
    "target_signals": "target_signals",
    "mitigated_generated": "mitigated_generated_manifest",
    "scheme": "scheme",
    "n": "extraction_n",
    "identifier_kinds": "identifier_kinds",
    "topology_k": "topology_k",
    "topology_kinds": "topology_kinds",
    "mia_kind": "mia_kind",
    "fpr_cap": "fpr_cap",
    "strategy": "mitigation_strategy",
    "epsilon": "mitigation_epsilon",
    "fields": "mitigation_fields",
    "k_ip": "mitigation_k_ip",
    "k_mac": "mitigation_k_mac",
    "constant_ip": "mitigation_constant_ip",
    "constant_mac": "mitigation_constant_mac",
    "write_map": "mitigation_write_map",
    "unmitigated_flows": "utility_unmitigated_flows",
    "mitigated_flows": "utility_mitigated_flows",
    "test_flows": "utility_test_flows",
    "seed": "seed",
    "out": "output_dir",
}


def _add_audit_flags(p: argparse.ArgumentParser, mitigation: bool = False):
    p.add_argument("--config", help="flat 'section.key = value' config file")
    p.add_argument("--training", help="training manifest (path,label CSV)")
    p.add_argument("--generated", help="generated-corpus manifest")
    p.add_argument("--auxiliary", help="auxiliary manifest (MIA members)")
    p.add_argument("--non-training", dest="non_training", help="non-training manifest (MIA non-members)")
    p.add_argument("--train-signals", dest="train_signals", help="attack-model training signal CSV")
    p.add_argument("--target-signals", dest="target_signals", help="target signal CSV")
    p.add_argument("--scheme", choices=("bit", "hex", "byte"))
    p.add_argument("-n", type=int, help="extraction window length")
    p.add_argument("--identifier-kinds", dest="identifier_kinds")
    p.add_argument("--topology-k", dest="topology_k", type=int)
    p.add_argument("--topology-kinds", dest="topology_kinds")
    p.add_argument("--mia-kind", dest="mia_kind", choices=("threshold", "logistic"))
    p.add_argument("--fpr-cap", dest="fpr_cap", type=float)
    p.add_argument("--unmitigated-flows", dest="unmitigated_flows")
    p.add_argument("--mitigated-flows", dest="mitigated_flows")
    p.add_argument("--test-flows", dest="test_flows")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    if mitigation:
        p.add_argument("--strategy", choices=("CA", "PS", "PP", "DP"), type=str.upper)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--fields", help="comma-separated DP target fields")
        p.add_argument("--k-ip", dest="k_ip", type=int)
        p.add_argument("--k-mac", dest="k_mac", type=int)
        p.add_argument("--constant-ip", dest="constant_ip")
        p.add_argument("--constant-mac", dest="constant_mac")
        p.add_argument("--mitigated-generated", dest="mitigated_generated")
        p.add_argument("--write-map", dest="write_map", action="store_true", default=None,
                       help="also write the pseudonym map to <out>/private/ (PS only)")


def _config_from_args(args):
    overrides = {attr: getattr(args, flag) for flag, attr in FLAG_ATTRS.items() if getattr(args, flag, None) is not None}
    return load_config(args.config, overrides)


def cmd_split(args) -> int:
    corpus = load_corpus(args.manifest)
    split = prepare_dataset(
        corpus,
        max_packets=args.max_packets,
        max_segments=args.max_segments,
        holdout_label_count=args.holdout,
        per_label_cap=args.cap,
        seed=args.seed,
    )
    out = Path(args.out)
    for name in ("training", "auxiliary", "non_training"):
        save_corpus(getattr(split, name), out / name)
    summary = {
        "seed": split.seed,
        "holdout_labels": split.holdout_labels,
        "counts": {n: len(getattr(split, n)) for n in ("training", "auxiliary", "non_training")},
    }
    (out / "split.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_audit(args) -> int:
    cfg = _config_from_args(args)
    report = run_audit(cfg)
    path = write_report(report, cfg.output_dir)
    print(path)
    return 0


def cmd_mitigate(args) -> int:
    cfg = _config_from_args(args)
    _, report = run_mitigation(cfg)
    path = write_report(report, cfg.output_dir)
    print(json.dumps(report.sections["mitigation"]["deltas"], sort_keys=True))
    print(path)
    return 0


def cmd_mia(args) -> int:
    if not Path(args.train_signals).exists() or not Path(args.target_signals).exists():
        raise ConfigError({"signals": "train and target signal CSVs must exist"})
    res = run_mia(load_signals(args.train_signals), load_signals(args.target_signals), args.kind, args.fpr_cap)
    curve = res.pop("curve")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_roc_csv(curve, out / "roc.csv")
    res["roc_curve"] = "roc.csv"
    report = {"auc": res["auc"], "tpr_at_fpr_001" if args.fpr_cap == 0.01 else "tpr_at_fpr": res["tpr_at_fpr"], **res}
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    (out / "mia.json").write_text(text)
    print(text, end="")
    return 0


def _fmt(v) -> str:
    return "-" if v is None else f"{v:+.3f}"


def cmd_report(args) -> int:
    data = json.loads(Path(args.report).read_text())
    if "mitigation" in data:
        d = data["mitigation"]["deltas"]
        p = data["mitigation"]["parameters"]
        cols = ("mia", "extraction", "network", "fidelity", "task_accuracy")
        lines = [
            "strategy  " + "  ".join(f"{c:>13}" for c in cols),
            f"{p['strategy']:<8}  " + "  ".join(f"{_fmt(d.get(c)):>13}" for c in cols),
            "(privacy columns: lower is better; fidelity and task accuracy: higher is better)",
        ]
    else:
        lines = []
        for name in ("mia", "extraction", "identifiers", "properties", "topology", "fidelity", "utility"):
            sec = data.get(name, {})
            if sec.get("status") != "ok":
                lines.append(f"{name:<12} skipped: {sec.get('reason', 'absent')}")
                continue
            if name == "mia":
                lines.append(f"{name:<12} auc={sec['auc']:.3f} tpr@fpr<={sec['fpr_cap']}={sec['tpr_at_fpr']:.3f}")
            elif name == "extraction":
                lines.append(f"{name:<12} rate={sec['extractable_rate']:.3f} (n={sec['n']}, {sec['scheme']})")
            elif name == "identifiers":
                for kind, e in sec.items():
                    if isinstance(e, dict):
                        cov = "-" if e["coverage"] is None else f"{e['coverage']:.3f}"
                        conf = "-" if e["confidence"] is None else f"{e['confidence']:.3f}"
                        lines.append(f"{name:<12} {kind:<8} coverage={cov} confidence={conf}")
            elif name == "properties":
                vals = " ".join(f"{k}={'-' if v is None else f'{v:.3f}'}" for k, v in sec["fields"].items())
                lines.append(f"{name:<12} {vals}")
            elif name == "topology":
                for kind in ("ip", "mac"):
                    e = sec.get(kind)
                    if e and "node_overlap" in e:
                        lines.append(f"{name:<12} {kind:<4} node={e['node_overlap']:.3f} edge={e['edge_overlap']:.3f} "
                                     f"degree_emd={e['degree_emd']:.3f}")
            elif name == "fidelity":
                lines.append(f"{name:<12} " + " ".join(f"{k}={sec[k]:.3f}" for k in ("emd_sa", "emd_da", "emd_sp", "emd_dp", "emd_pr")))
            elif name == "utility":
                lines.append(f"{name:<12} delta={sec['delta']:+.3f}")
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthpriv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="segment, cap and split a labeled corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-packets", type=int, default=2000)
    p.add_argument("--max-segments", type=int, default=20)
    p.add_argument("--holdout", type=int, default=2)
    p.add_argument("--cap", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("audit", help="run every applicable attack and fidelity metric")
    _add_audit_flags(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("mitigate", help="mitigate training data and report privacy/utility deltas")
    _add_audit_flags(p, mitigation=True)
    p.set_defaults(func=cmd_mitigate)

    p = sub.add_parser("mia", help="membership inference from signal CSVs")
    p.add_argument("--train-signals", dest="train_signals", required=True)
    p.add_argument("--target-signals", dest="target_signals", required=True)
    p.add_argument("--kind", choices=("threshold", "logistic"), default="threshold")
    p.add_argument("--fpr-cap", dest="fpr_cap", type=float, default=0.01)
    p.add_argument("--out", default="mia_out")
    p.set_defaults(func=cmd_mia)

    p = sub.add_parser("report", help="summarize a report.json")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
