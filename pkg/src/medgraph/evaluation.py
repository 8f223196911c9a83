"""Detection metrics, ablations, and scaling measurements against synthetic
ground truth.

Label convention: positives are planted violations; everything else,
including labeled extremes, is a negative.  Flagging a rare-but-valid
extreme is therefore a false positive, and the extreme false-positive rate
directly measures whether the scorer separates semantic disruption from
numerical rarity.
"""

from __future__ import annotations

import csv
import math
import time
import tracemalloc
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import encoder as enc
from .errors import MissingLabel
from .graph import ClinicalGraph
from .induce import TemplateConfig, induce
from .logic import GraphIndex, Grammar
from .mdl import AnomalyReport, calibrate_threshold, score_all
from .synth import CorpusConfig, GroundTruth, generate
from .trainer import TrainConfig, train


@dataclass(frozen=True)
class DetectionMetrics:
    precision: float
    recall: float
    f1: float
    auc: float
    true_positives: int
    false_positives: int
    false_negatives: int
    true_negatives: int
    extreme_fp_rate: float

    def row(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "auc": self.auc,
            "tp": self.true_positives,
            "fp": self.false_positives,
            "fn": self.false_negatives,
            "tn": self.true_negatives,
            "extreme_fp_rate": self.extreme_fp_rate,
        }


def _rank_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """AUC as the Mann-Whitney rank statistic with midrank ties."""
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = float(ranks[labels].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def detection_metrics(reports: list[AnomalyReport], truth: GroundTruth) -> DetectionMetrics:
    """Standard precision/recall/F1 plus rank AUC over the report scores."""
    by_node = {r.node: r for r in reports}
    for node in list(truth.violations) + sorted(truth.extremes):
        if node not in by_node:
            raise MissingLabel(f"labeled node {node} missing from reports")
    scores = np.array([r.score for r in reports])
    labels = np.array([r.node in truth.violations for r in reports])
    flagged = np.array([r.flagged for r in reports])
    tp = int((flagged & labels).sum())
    fp = int((flagged & ~labels).sum())
    fn = int((~flagged & labels).sum())
    tn = int((~flagged & ~labels).sum())
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    extreme_flagged = sum(1 for node in truth.extremes if by_node[node].flagged)
    extreme_fp_rate = extreme_flagged / len(truth.extremes) if truth.extremes else 0.0
    return DetectionMetrics(
        precision=precision,
        recall=recall,
        f1=f1,
        auc=_rank_auc(scores, labels),
        true_positives=tp,
        false_positives=fp,
        false_negatives=fn,
        true_negatives=tn,
        extreme_fp_rate=extreme_fp_rate,
    )


# ---------------------------------------------------------------------------
# scoring pipelines (full model and ablations)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Toggles:
    no_symbolic: bool = False   # score by embedding reconstruction error only
    no_mdl: bool = False        # score by raw violation count
    no_temporal: bool = False   # window = infinity, zero time decay
    no_healing: bool = False    # skip the repair-accuracy column


def _recon_error_scores(graph: ClinicalGraph, config: TrainConfig, no_temporal: bool) -> list[AnomalyReport]:
    """Purely neural scorer: per-node mean negative log-likelihood of its
    incident observed edges and matched negative samples."""
    params = enc.init_params(graph.schema, d=config.d, d_z=config.d_z, n_layers=config.n_layers, seed=config.seed)
    if no_temporal:
        params.time_decay[:] = 0.0
    weights = enc.LossWeights(kl=config.beta, soft_consistency=0.0)
    context = enc.make_context(graph, params, None, weights, seed=config.seed)
    for _ in range(10):
        grads = enc.gradients(graph, params, "recon", None, weights, seed=config.seed, context=context)
        params = _plain_step(params, grads, config.learning_rate, no_temporal)
    mu = enc._forward(graph, params, features=context.features, segments=context.segments).mu
    totals = np.zeros(graph.node_count)
    counts = np.zeros(graph.node_count)
    for samples, label in ((context.observed, 1.0), (context.negatives, 0.0)):
        for u, v, r in samples:
            logit = float(mu[u] @ mu[v]) + float(params.rel_bias[r])
            nll = float(np.logaddexp(0.0, -logit if label else logit))
            for node in (u, v):
                totals[node] += nll
                counts[node] += 1.0
    scores = np.divide(totals, np.maximum(counts, 1.0))
    reports = [AnomalyReport(node=v, score=float(scores[v]), flagged=False, contributions=()) for v in graph.node_ids()]
    reports.sort(key=lambda r: (-r.score, r.node))
    return reports


def _plain_step(params, grads, lr, freeze_decay):
    out = params.copy()
    for l in range(len(out.layers)):
        out.layers[l] -= lr * grads[f"W{l}"]
    out.head_mu -= lr * grads["head_mu"]
    out.head_lv -= lr * grads["head_lv"]
    out.rel_bias -= lr * grads["rel_bias"]
    if not freeze_decay:
        out.time_decay = np.maximum(out.time_decay - lr * grads["time_decay"], 0.0)
    return out


def _violation_count_scores(graph: ClinicalGraph, grammar: Grammar) -> list[AnomalyReport]:
    index = GraphIndex(graph)
    counts = np.zeros(graph.node_count)
    for clause in grammar.clauses:
        _, violated = index.clause_masks(clause)
        counts[violated] += 1.0
    reports = [AnomalyReport(node=v, score=float(counts[v]), flagged=False, contributions=()) for v in graph.node_ids()]
    reports.sort(key=lambda r: (-r.score, r.node))
    return reports


def _flag(reports: list[AnomalyReport], threshold: float) -> list[AnomalyReport]:
    return [replace(r, flagged=r.score > threshold) for r in reports]


def run_detection(
    graph: ClinicalGraph,
    grammar: Grammar,
    method: str = "sigma",
    value: float = 3.0,
) -> tuple[list[AnomalyReport], float]:
    """Score all nodes and flag by a threshold calibrated on those scores."""
    reports = score_all(graph, grammar, float("inf"))
    tau = calibrate_threshold([r.score for r in reports], method, value)
    return score_all(graph, grammar, tau), tau


def repair_top_k_accuracy(
    graph: ClinicalGraph,
    grammar: Grammar,
    truth: GroundTruth,
    reports: list[AnomalyReport],
    top_k: int = 3,
) -> float:
    """Fraction of flagged planted violations whose corrupted field appears
    among the top-k repair candidates."""
    from .healer import NoRepairFound, RepairConfig, repair_candidates

    flagged = {r.node for r in reports if r.flagged}
    considered = [node for node in sorted(truth.violations) if node in flagged]
    if not considered:
        return 0.0
    hits = 0
    config = RepairConfig(top_k=top_k)
    for node in considered:
        _, attr, _ = truth.violations[node]
        try:
            candidates = repair_candidates(node, grammar, graph, config)
        except NoRepairFound:
            continue
        fields = {e.attr for c in candidates for e in c.edits if e.op == "set_attr"}
        if attr in fields:
            hits += 1
    return hits / len(considered)


@dataclass
class AblationRow:
    name: str
    toggles: Toggles
    metrics: DetectionMetrics
    repair_top3: float | None


def ablation_run(
    graph: ClinicalGraph,
    truth: GroundTruth,
    toggles: Toggles,
    train_config: TrainConfig | None = None,
    threshold_method: str = "sigma",
    threshold_value: float = 3.0,
    name: str = "",
) -> AblationRow:
    """One ablation configuration; see Toggles for the semantics."""
    train_config = train_config or TrainConfig()
    if toggles.no_symbolic:
        reports = _recon_error_scores(graph, train_config, toggles.no_temporal)
        tau = calibrate_threshold([r.score for r in reports], threshold_method, threshold_value)
        reports = _flag(reports, tau)
        grammar = Grammar()
    else:
        grammar = induce(graph, train_config.templates)
        if toggles.no_mdl:
            reports = _violation_count_scores(graph, grammar)
            tau = 0.5  # any crisp violation flags the node
            reports = _flag(reports, tau)
        else:
            reports, tau = run_detection(graph, grammar, threshold_method, threshold_value)
    metrics = detection_metrics(reports, truth)
    repair = None
    if not toggles.no_healing and not toggles.no_symbolic and len(grammar):
        repair = repair_top_k_accuracy(graph, grammar, truth, reports)
    return AblationRow(name=name or _toggle_name(toggles), toggles=toggles, metrics=metrics, repair_top3=repair)


def _toggle_name(toggles: Toggles) -> str:
    on = [n for n in ("no_symbolic", "no_mdl", "no_temporal", "no_healing") if getattr(toggles, n)]
    return "+".join(on) if on else "full"


def ablation_table(
    graph: ClinicalGraph,
    truth: GroundTruth,
    combos: list[Toggles] | None = None,
    train_config: TrainConfig | None = None,
) -> list[AblationRow]:
    combos = combos or [
        Toggles(),
        Toggles(no_symbolic=True),
        Toggles(no_mdl=True),
        Toggles(no_temporal=True),
        Toggles(no_healing=True),
    ]
    return [ablation_run(graph, truth, t, train_config) for t in combos]


def export_metrics_csv(rows: list[AblationRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["config", "precision", "recall", "f1", "auc", "tp", "fp", "fn", "tn", "extreme_fp_rate", "repair_top3"]
        )
        for row in rows:
            m = row.metrics
            writer.writerow(
                [
                    row.name,
                    repr(m.precision), repr(m.recall), repr(m.f1), repr(m.auc),
                    m.true_positives, m.false_positives, m.false_negatives, m.true_negatives,
                    repr(m.extreme_fp_rate),
                    "" if row.repair_top3 is None else repr(row.repair_top3),
                ]
            )


def format_metrics_table(rows: list[AblationRow]) -> str:
    header = f"{'config':<28} {'P':>6} {'R':>6} {'F1':>6} {'AUC':>6} {'ext_fp':>7} {'repair@3':>9}"
    lines = [header, "-" * len(header)]
    for row in rows:
        m = row.metrics
        repair = "-" if row.repair_top3 is None else f"{row.repair_top3:.3f}"
        lines.append(
            f"{row.name:<28} {m.precision:>6.3f} {m.recall:>6.3f} {m.f1:>6.3f} {m.auc:>6.3f} "
            f"{m.extreme_fp_rate:>7.3f} {repair:>9}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingRow:
    target_edges: int
    node_count: int
    edge_count: int
    scoring_seconds: float
    peak_memory_bytes: int


@dataclass
class ScalingReport:
    rows: list[ScalingRow] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["target_edges", "nodes", "edges", "scoring_seconds", "peak_memory_bytes"])
            for row in self.rows:
                writer.writerow(
                    [row.target_edges, row.node_count, row.edge_count, repr(row.scoring_seconds), row.peak_memory_bytes]
                )


def scaling_run(sizes: list[int], base_config: CorpusConfig | None = None) -> ScalingReport:
    """Time score_all on corpora whose edge counts track the requested sizes
    (same seed policy throughout).  The grammar is the planted one at every
    size, so the clause count is constant and the measurement isolates how
    scoring scales with the graph."""
    if sorted(sizes) != list(sizes):
        raise ValueError("sizes must be ascending")
    base = base_config or CorpusConfig()
    report = ScalingReport()
    for target in sizes:
        # each event contributes 2-3 edges depending on kind mix
        n_events = max(target // 2, 10)
        config = CorpusConfig(
            seed=base.seed,
            n_patients=max(n_events // 6, 10),
            n_physicians=max(n_events // 100, 3),
            n_events=n_events,
            violation_rate=base.violation_rate,
            extreme_rate=base.extreme_rate,
            planted_clauses=list(base.planted_clauses),
            event_mix=dict(base.event_mix),
            distributions=base.distributions,
        )
        graph, _truth = generate(config)
        from .logic import parse_clause

        grammar = Grammar(clauses=[parse_clause(t, graph.schema) for t in config.planted_clauses])
        grammar.refresh_stats(graph)
        tracemalloc.start()
        start = time.perf_counter()
        reports = score_all(graph, grammar, float("inf"))
        elapsed = time.perf_counter() - start
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        assert len(reports) == graph.node_count
        stats = graph.stats()
        report.rows.append(
            ScalingRow(
                target_edges=target,
                node_count=stats.node_count,
                edge_count=stats.edge_count,
                scoring_seconds=elapsed,
                peak_memory_bytes=int(peak),
            )
        )
    return report
