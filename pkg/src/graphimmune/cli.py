"""Command-line interface.

Subcommands: certify, immunize-edge, immunize-node, baseline, evaluate,
gradcheck, report. Exit codes: 0 ok, 1 usage error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .baselines import histogram_rows, similarity_report
from .certify import ImmuneMask
from .graph import GraphError
from .harness import (
    ConfigError,
    _atomic_write,
    _canonical_json,
    build_config,
    evaluate_mask,
    gradcheck,
    load_data,
    parse_config_file,
    run_experiment,
)
from .logits import LogitsError
from .ppr import ConvergenceError

_CONFIG_FLAGS = (
    ("dataset", str, "builtin dataset name ('karate') or 'file'"),
    ("edges", str, "edge list path (dataset=file)"),
    ("features", str, "feature CSV path"),
    ("labels", str, "label CSV path"),
    ("logits", str, "precomputed score CSV path"),
    ("n-classes", int, "class count for a score CSV"),
    ("alpha", float, "walk continuation probability"),
    ("solver", str, "dense | power | auto"),
    ("tol", float, "iterative solver tolerance"),
    ("max-iter", int, "iterative solver cap"),
    ("local-budget", str, "e.g. degree-minus:6 or constant:2"),
    ("global-budget", int, "optional global flip budget (oracle only)"),
    ("edge-mode", str, "undirected-pair | directed-fragile"),
    ("budget", str, "immunization budget(s), absolute or fraction; comma list"),
    ("attack-updates", int, "attack re-solves during edge immunization"),
    ("candidate-count", int, "candidate pool size for node immunization"),
    ("seed", int, "random seed"),
    ("targets", str, "'all' or comma-separated node ids"),
    ("epochs", int, "training epochs for the linear scorer"),
    ("lr", float, "training learning rate"),
    ("reference", str, "prediction | labels"),
    ("output-dir", str, "output directory"),
)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    for name, typ, help_text in _CONFIG_FLAGS:
        p.add_argument(f"--{name}", type=typ, help=help_text)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphimmune",
        description="Certify PPR-classifier robustness and immunize graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("certify", "certify targets on the (optionally masked) graph"),
        ("immunize-edge", "greedy pair immunization, then re-certify"),
        ("immunize-node", "gain-based node immunization, then re-certify"),
        ("baseline", "run a reference immunization heuristic"),
        ("evaluate", "re-certify under an existing mask file"),
        ("gradcheck", "verify gradients and the attack solver"),
        ("report", "similarity histograms for an existing mask file"),
    ):
        p = sub.add_parser(name, help=desc)
        _add_config_flags(p)
        if name in ("certify", "evaluate", "report"):
            p.add_argument("--mask", help="mask JSON path")
        if name == "baseline":
            p.add_argument(
                "--kind",
                required=True,
                help="random | attack-random | jaccard | cosine | bridgeness | betweenness",
            )
            p.add_argument("--level", default="edge", choices=("edge", "node"))
        if name == "gradcheck":
            p.add_argument("--instances", type=int, default=20)
    return parser


def _config_from_args(args) -> "ExperimentConfig":
    file_overrides = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            file_overrides = parse_config_file(fh.read())
    flags = {}
    for name, _, _ in _CONFIG_FLAGS:
        key = name.replace("-", "_")
        val = getattr(args, key, None)
        if val is not None:
            flags[key] = val
    return build_config(file_overrides, **flags)


def _load_mask(path: str | None) -> ImmuneMask:
    if not path:
        return ImmuneMask.empty()
    with open(path, "r", encoding="utf-8") as fh:
        return ImmuneMask.from_dict(json.load(fh))


def _cmd_certify(args) -> int:
    cfg = _config_from_args(args)
    mask = _load_mask(getattr(args, "mask", None))
    report = evaluate_mask(cfg, mask)
    print(_summary_line(report))
    return 0


def _cmd_immunize(args, method: str) -> int:
    cfg = _config_from_args(args)
    cfg.method = method
    report = run_experiment(cfg)
    print(_summary_line(report))
    return 0


def _cmd_baseline(args) -> int:
    cfg = _config_from_args(args)
    cfg.method = f"baseline:{args.kind}"
    cfg.baseline_level = args.level
    report = run_experiment(cfg)
    print(_summary_line(report))
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _config_from_args(args)
    mask = _load_mask(args.mask)
    report = evaluate_mask(cfg, mask)
    print(_summary_line(report))
    return 0


def _cmd_gradcheck(args) -> int:
    cfg = _config_from_args(args)
    summary = gradcheck(seed=cfg.seed, instances=args.instances)
    for key in sorted(summary):
        print(f"{key}: {summary[key]}")
    if not summary["passed"]:
        print("gradcheck: FAIL")
        return 3
    print("gradcheck: PASS")
    return 0


def _cmd_report(args) -> int:
    cfg = _config_from_args(args)
    mask = _load_mask(args.mask)
    data = load_data(cfg)
    rep = similarity_report(data.graph, data.features, data.labels, mask)
    out = os.path.join(cfg.output_dir, "histograms")
    os.makedirs(out, exist_ok=True)
    by_metric = {}
    for metric, grp, lo, hi, count in histogram_rows(rep):
        by_metric.setdefault(metric, []).append((grp, lo, hi, count))
    for metric, entries in sorted(by_metric.items()):
        lines = ["group,bin_lo,bin_hi,count"]
        lines += [f"{g},{lo!r},{hi!r},{c}" for g, lo, hi, c in entries]
        _atomic_write(os.path.join(out, f"{metric}.csv"), "\n".join(lines) + "\n")
    summary = {
        metric: {grp: len(vals) for grp, vals in groups.items()}
        for metric, groups in rep.items()
    }
    print(_canonical_json({"histogram_dir": out, "sample_sizes": summary}).strip())
    return 0


def _summary_line(report: dict) -> str:
    before = report["before"]["robust_ratio"]
    if report["after"]:
        last = report["after"][-1]
        return (
            f"robust ratio {before:.4f} -> {last['robust_ratio']:.4f} "
            f"(budget {last['budget']}); outputs in {report['config']['output_dir']}"
        )
    return f"robust ratio {before:.4f}; outputs in {report['config']['output_dir']}"


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "certify":
            return _cmd_certify(args)
        if args.command == "immunize-edge":
            return _cmd_immunize(args, "advimmune-edge")
        if args.command == "immunize-node":
            return _cmd_immunize(args, "advimmune-node")
        if args.command == "baseline":
            return _cmd_baseline(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "report":
            return _cmd_report(args)
        parser.print_usage()
        return 1
    except (ConfigError, GraphError, LogitsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
