"""Experiment orchestration: load data, certify, immunize, re-certify,
and emit reports.

All outputs are deterministic given (config, seed): files are written
canonically (sorted JSON keys, repr floats) and atomically; the wall-clock
field is the only part of a report that varies between identical runs.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .baselines import (
    EDGE_KINDS,
    NODE_KINDS,
    baseline_edge,
    baseline_node,
    histogram_rows,
    similarity_report,
)
from .certify import (
    BudgetRule,
    CertificationResult,
    ImmuneMask,
    OracleGuardError,
    PerturbationScenario,
    brute_force_worst_margin,
    certify_graph,
    worst_case_margin,
)
from .gradients import finite_diff_check
from .graph import Graph, GraphError, PerturbationDelta, karate, karate_labels, load_edge_list, load_labels
from .immunize import ImmunizationRun, advimmune_edge, advimmune_node
from .logits import (
    FeatureMatrix,
    Logits,
    LogitsError,
    load_features,
    load_logits,
    reference_classes,
    train_linear_logits,
)
from .ppr import PPRContext

METHODS = ("advimmune-edge", "advimmune-node")


class ConfigError(ValueError):
    """Raised for invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Flat experiment description; every field maps to a CLI flag and a
    ``key = value`` line in a config file."""

    dataset: str = "karate"  # builtin name, or "file" with paths below
    edges: str | None = None
    features: str | None = None
    labels: str | None = None
    logits: str | None = None
    n_classes: int | None = None
    alpha: float = 0.85
    solver: str = "auto"
    tol: float = 1e-10
    max_iter: int = 10_000
    local_budget: str = "degree-minus:6"
    global_budget: int | None = None
    edge_mode: str = "undirected-pair"
    method: str = "advimmune-edge"
    baseline_level: str = "edge"
    budget: str = "2"
    attack_updates: int | None = None
    candidate_count: int | None = None
    seed: int = 0
    targets: str = "all"
    epochs: int = 300
    lr: float = 0.5
    reference: str = "prediction"  # or "labels" for the ablation mode
    mask_file: str | None = None
    output_dir: str = "out"

    def context(self) -> PPRContext:
        return PPRContext(
            alpha=self.alpha, solver=self.solver, tol=self.tol, max_iter=self.max_iter
        )

    def scenario(self) -> PerturbationScenario:
        return PerturbationScenario(
            local_budget=BudgetRule.parse(self.local_budget),
            global_budget=self.global_budget,
            edge_mode=self.edge_mode,
        )

    def budgets(self, g: Graph, level: str) -> list[int]:
        """Resolve the budget schedule against the graph size.

        Entries below 1 are fractions of the pair count (n^2, edge level)
        or the node count; fractional budgets floor, with a minimum of 1.
        """
        out = []
        for tok in str(self.budget).split(","):
            tok = tok.strip()
            if not tok:
                continue
            val = float(tok)
            if val < 0:
                raise ConfigError(f"negative budget {tok!r}")
            if val < 1.0 and val > 0:
                base = g.n * g.n if level == "edge" else g.n
                out.append(max(int(val * base), 1))
            else:
                if val != int(val):
                    raise ConfigError(f"budget {tok!r} must be integral when >= 1")
                out.append(int(val))
        if not out:
            raise ConfigError("empty budget schedule")
        return out

    def resolve_targets(self, g: Graph) -> tuple:
        if self.targets == "all":
            return tuple(range(g.n))
        try:
            ids = tuple(int(x) for x in self.targets.split(","))
        except ValueError:
            raise ConfigError(f"bad targets spec {self.targets!r}")
        if not ids:
            raise ConfigError("empty target set")
        for t in ids:
            if not 0 <= t < g.n:
                raise ConfigError(f"target {t} out of range")
        return ids


_CONFIG_TYPES = {f.name: f.type for f in ExperimentConfig.__dataclass_fields__.values()}


def parse_config_file(text: str) -> dict:
    """Parse ``key = value`` lines (``#`` comments) into override pairs."""
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = body.partition("=")
        overrides[key.strip().replace("-", "_")] = value.strip()
    return overrides


def build_config(file_overrides: dict | None = None, **flag_overrides) -> ExperimentConfig:
    """Layer config-file values then explicit flags over the defaults."""
    cfg = ExperimentConfig()
    merged = dict(file_overrides or {})
    merged.update({k: v for k, v in flag_overrides.items() if v is not None})
    for key, raw in merged.items():
        if key not in ExperimentConfig.__dataclass_fields__:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if isinstance(raw, str):
            raw = _coerce(key, raw)
        cfg = replace(cfg, **{key: raw})
    return cfg


def _coerce(key: str, raw: str):
    if raw.lower() in ("none", ""):
        return None
    for caster in (int, float):
        field_t = str(_CONFIG_TYPES[key])
        if caster.__name__ in field_t:
            try:
                return caster(raw)
            except ValueError:
                break
    return raw


@dataclass
class LoadedData:
    graph: Graph
    logits: Logits
    features: np.ndarray | None
    labels: np.ndarray | None


def load_data(cfg: ExperimentConfig) -> LoadedData:
    """Materialize the graph and scored classes described by a config."""
    if cfg.dataset == "karate":
        g = karate()
        labels = karate_labels()
        features = np.eye(g.n)
    elif cfg.dataset == "file":
        if not cfg.edges:
            raise ConfigError("dataset=file requires an edges path")
        g = load_edge_list(_read(cfg.edges))
        labels = load_labels(_read(cfg.labels), g.n) if cfg.labels else None
        features = load_features(_read(cfg.features)) if cfg.features else None
    else:
        raise ConfigError(f"unknown dataset {cfg.dataset!r}")

    if cfg.logits:
        if cfg.n_classes is None:
            raise ConfigError("loading a logits CSV requires n_classes")
        l = load_logits(_read(cfg.logits), cfg.n_classes)
    else:
        if labels is None or features is None:
            raise ConfigError("training needs features and labels (or a logits CSV)")
        fm = FeatureMatrix(features, labels=labels, train_mask=np.ones(g.n, bool))
        l = train_linear_logits(fm, epochs=cfg.epochs, lr=cfg.lr, seed=cfg.seed)
    if l.n != g.n:
        raise ConfigError(f"score matrix has {l.n} rows for a {g.n}-node graph")

    ctx = cfg.context()
    if cfg.reference == "labels":
        if labels is None:
            raise ConfigError("reference=labels requires labels")
        l = l.with_reference(labels)
    elif cfg.reference == "prediction":
        l = l.with_reference(reference_classes(g, ctx, l))
    else:
        raise ConfigError(f"unknown reference mode {cfg.reference!r}")
    return LoadedData(g, l, features, labels)


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def robust_ratio(cert: CertificationResult, targets) -> float:
    """Fraction of targets certified robust."""
    targets = tuple(targets)
    if not targets:
        raise ValueError("empty target set")
    idx = {t: i for i, t in enumerate(cert.targets)}
    flags = [bool(cert.robust[idx[t]]) for t in targets]
    return float(sum(flags)) / len(flags)


def _metrics(cert: CertificationResult, targets) -> dict:
    idx = {t: i for i, t in enumerate(cert.targets)}
    margins = np.array([cert.worst_margin[idx[t]] for t in targets])
    return {
        "robust_ratio": robust_ratio(cert, targets),
        "robust_count": int(sum(cert.robust[idx[t]] for t in targets)),
        "avg_worst_margin": float(margins.mean()),
        "total_worst_margin": float(margins.sum()),
    }


def _merged_attack_delta(cert: CertificationResult, g: Graph) -> PerturbationDelta:
    """Union of all class-pair attack pairs, signed against the base graph."""
    pairs = set()
    for delta in cert.pair_deltas.values():
        pairs |= delta.pairs()
    flips = [
        (u, v, -1 if g.adjacency[u, v] else 1) for u, v in sorted(pairs)
    ]
    return PerturbationDelta(flips)


def _run_method(cfg, data, ctx, sc, targets, before_cert):
    """Dispatch the configured method across the budget schedule.

    Greedy methods run once at the largest budget and are evaluated at
    prefix masks; baselines are re-selected per budget. Returns
    ``(per-budget masks, final run or None, level)``.
    """
    method = cfg.method
    g = data.graph
    if method in ("advimmune-edge", "advimmune-node"):
        level = "edge" if method.endswith("edge") else "node"
        budgets = cfg.budgets(g, level)
        top = max(budgets)
        if method == "advimmune-edge":
            c = cfg.attack_updates
            _, run = advimmune_edge(
                targets, g, ctx, data.logits, sc, top, attack_updates=c, seed=cfg.seed
            )
        else:
            _, run = advimmune_node(
                targets,
                g,
                ctx,
                data.logits,
                sc,
                top,
                candidate_count=cfg.candidate_count,
                seed=cfg.seed,
            )
        masks = {}
        for b in budgets:
            chosen = run.selections[:b]
            if level == "edge":
                masks[b] = ImmuneMask(frozenset(chosen), frozenset())
            else:
                masks[b] = ImmuneMask(frozenset(), frozenset(chosen))
        return masks, run, level
    if method.startswith("baseline:"):
        kind = method.split(":", 1)[1]
        level = cfg.baseline_level
        if level not in ("edge", "node"):
            raise ConfigError(f"unknown baseline level {level!r}")
        budgets = cfg.budgets(g, level)
        attack_delta = _merged_attack_delta(before_cert, g)
        select = baseline_edge if level == "edge" else baseline_node
        valid = EDGE_KINDS if level == "edge" else NODE_KINDS
        if kind not in valid:
            raise ConfigError(f"unknown {level} baseline {kind!r}")
        masks = {
            b: select(
                kind, g, data.features, data.labels, b,
                attack_delta=attack_delta, seed=cfg.seed,
            )
            for b in budgets
        }
        return masks, None, level
    raise ConfigError(f"unknown method {cfg.method!r}")


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Full pipeline: load, certify, immunize per schedule, re-certify,
    write report files. Returns the report dictionary."""
    started = time.perf_counter()
    data = load_data(cfg)
    ctx = cfg.context()
    sc = cfg.scenario()
    g = data.graph
    targets = cfg.resolve_targets(g)

    before = certify_graph(targets, g, ctx, data.logits, sc, ImmuneMask.empty())
    masks, run, level = _run_method(cfg, data, ctx, sc, targets, before)

    warnings_log = []
    after_entries = []
    final_mask = ImmuneMask.empty()
    final_cert = before
    for b in sorted(masks):
        mask = masks[b]
        cert = certify_graph(targets, g, ctx, data.logits, sc, mask)
        entry = {"budget": b, **_metrics(cert, targets)}
        entry["protected_pairs"] = mask.edge_budget_used
        entry["protected_nodes"] = mask.node_budget_used
        after_entries.append(entry)
        if entry["robust_ratio"] < robust_ratio(before, targets) - 1e-12:
            warnings_log.append(
                f"certification gap: robust ratio fell at budget {b}"
            )
        final_mask, final_cert = mask, cert

    report = {
        "version": __version__,
        "config": asdict(cfg),
        "n_nodes": g.n,
        "n_edges": g.num_edges,
        "targets": list(targets),
        "method": cfg.method,
        "before": _metrics(before, targets),
        "after": after_entries,
        "objective_trace": list(run.objective_trace) if run else [],
        "status": run.status if run else "ok",
        "attack_updates": run.attack_update_count if run else 0,
        "gain_update_counts": list(run.update_counts) if run else [],
        "warnings": warnings_log,
        "node_id_map": list(g.original_ids) if g.original_ids else None,
        "scenario": {
            "kind": sc.kind,
            "local_budget": sc.local_budget.describe(),
            "global_budget": sc.global_budget,
            "edge_mode": sc.edge_mode,
            "tie_break": "smallest index (class, node, pair lexicographic)",
        },
    }
    _write_outputs(cfg, report, before, final_cert, final_mask, run, data)
    report["wall_clock_sec"] = time.perf_counter() - started
    _atomic_write(
        os.path.join(cfg.output_dir, "report.json"), _canonical_json(report)
    )
    return report


def evaluate_mask(cfg: ExperimentConfig, mask: ImmuneMask) -> dict:
    """Certify before/after a given mask and write the usual outputs."""
    started = time.perf_counter()
    data = load_data(cfg)
    ctx = cfg.context()
    sc = cfg.scenario()
    targets = cfg.resolve_targets(data.graph)
    before = certify_graph(targets, data.graph, ctx, data.logits, sc, ImmuneMask.empty())
    after = certify_graph(targets, data.graph, ctx, data.logits, sc, mask)
    report = {
        "version": __version__,
        "config": asdict(cfg),
        "n_nodes": data.graph.n,
        "targets": list(targets),
        "method": "evaluate",
        "before": _metrics(before, targets),
        "after": [
            {
                "budget": mask.edge_budget_used + mask.node_budget_used,
                **_metrics(after, targets),
                "protected_pairs": mask.edge_budget_used,
                "protected_nodes": mask.node_budget_used,
            }
        ],
        "objective_trace": [],
        "status": "ok",
        "warnings": [],
    }
    _write_outputs(cfg, report, before, after, mask, None, data)
    report["wall_clock_sec"] = time.perf_counter() - started
    _atomic_write(
        os.path.join(cfg.output_dir, "report.json"), _canonical_json(report)
    )
    return report


def _write_outputs(cfg, report, before, after_cert, mask, run, data):
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    _atomic_write(os.path.join(out, "margins_before.csv"), before.to_csv_text())
    _atomic_write(os.path.join(out, "margins_after.csv"), after_cert.to_csv_text())
    _atomic_write(
        os.path.join(out, "deltas_before.json"), before.deltas_to_json() + "\n"
    )
    mask_obj = mask.to_dict()
    mask_obj["budget"] = mask.edge_budget_used + mask.node_budget_used
    mask_obj["trace"] = list(run.objective_trace) if run else []
    _atomic_write(os.path.join(out, "mask.json"), _canonical_json(mask_obj))
    trace = run.objective_trace if run else []
    lines = ["step,objective"]
    lines += [f"{i},{v!r}" for i, v in enumerate(trace)]
    _atomic_write(os.path.join(out, "trace.csv"), "\n".join(lines) + "\n")
    if data.features is not None or data.labels is not None:
        rep = similarity_report(data.graph, data.features, data.labels, mask)
        rows = histogram_rows(rep)
        hdir = os.path.join(out, "histograms")
        os.makedirs(hdir, exist_ok=True)
        by_metric = {}
        for metric, grp, lo, hi, count in rows:
            by_metric.setdefault(metric, []).append((grp, lo, hi, count))
        for metric, entries in sorted(by_metric.items()):
            lines = ["group,bin_lo,bin_hi,count"]
            lines += [f"{grp},{lo!r},{hi!r},{count}" for grp, lo, hi, count in entries]
            _atomic_write(os.path.join(hdir, f"{metric}.csv"), "\n".join(lines) + "\n")
    report["files"] = {
        "report": "report.json",
        "margins_before": "margins_before.csv",
        "margins_after": "margins_after.csv",
        "mask": "mask.json",
        "trace": "trace.csv",
    }


def _canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, frozenset):
        return sorted(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


def _atomic_write(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def gradcheck(
    seed: int = 0,
    instances: int = 20,
    fd_threshold: float = 1e-5,
    oracle_tol: float = 1e-9,
) -> dict:
    """Verify the analytic gradient and the attack solver on seeded
    instances; the corrupted gradient must fail. Returns a summary dict
    with ``passed`` set."""
    rng = np.random.default_rng(seed)
    ctx = PPRContext()
    fd_errors, control_errors, oracle_gaps = [], [], []
    skipped = 0
    for _ in range(instances):
        n = int(rng.integers(5, 11))
        adj = (rng.random((n, n)) < 0.45).astype(int)
        adj = np.triu(adj, 1)
        adj = adj + adj.T
        g = Graph(n, zip(*np.nonzero(np.triu(adj, 1))))
        if g.degrees.min() == 0:
            skipped += 1
            continue
        h = rng.normal(size=(n, 2))
        l = Logits(h)
        l = l.with_reference(reference_classes(g, ctx, l))
        t = int(rng.integers(n))
        k = 1 - int(l.y_ref[t])
        fd_errors.append(finite_diff_check(t, k, g, ctx, l, 1e-5))
        control_errors.append(
            finite_diff_check(t, k, g, ctx, l, 1e-5, _drop_degree_term=True)
        )
        sc = PerturbationScenario(
            local_budget=BudgetRule.constant(int(rng.integers(1, 3))),
            edge_mode="directed-fragile",
        )
        mask = ImmuneMask.empty()
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        while True:
            from .certify import admissible_pairs

            adm, _ = admissible_pairs(g, sc, mask)
            if len(adm) <= 14:
                break
            u, v = adm[int(rng.integers(len(adm)))]
            mask = mask.with_pair(u, v)
        try:
            bm, _ = brute_force_worst_margin(t, k, g, ctx, l, sc, mask)
        except OracleGuardError:
            skipped += 1
            continue
        pm, _ = worst_case_margin(t, k, g, ctx, l, sc, mask)
        oracle_gaps.append(abs(bm - pm))
    summary = {
        "instances": instances,
        "skipped": skipped,
        "max_fd_error": max(fd_errors) if fd_errors else None,
        "min_control_error": min(control_errors) if control_errors else None,
        "max_oracle_gap": max(oracle_gaps) if oracle_gaps else None,
        "fd_threshold": fd_threshold,
        "oracle_tol": oracle_tol,
    }
    summary["passed"] = bool(
        fd_errors
        and max(fd_errors) < fd_threshold
        and min(control_errors) > fd_threshold
        and max(oracle_gaps) < oracle_tol
    )
    return summary
