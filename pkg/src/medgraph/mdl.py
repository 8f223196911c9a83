"""Two-part codelength arithmetic and codelength-based anomaly scoring.

The total description length of a graph under a grammar splits into model
bits (clause encodings plus per-clause parameter cost) and data bits (one
Bernoulli codeword per clause outcome at each applicable node, with Laplace
smoothed confidence).  A node's anomaly score is the marginal data cost of
its own clause outcomes at frozen confidences; attribute self-information is
deliberately excluded so that statistically rare but grammar-consistent
records score low.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyInput, MissingNode
from .graph import ClinicalGraph
from .logic import AttrEqAtom, Clause, CmpAtom, GraphIndex, Grammar, KindAtom, NeighborAttrAtom, RelAtom
from .schema import Schema

NUMERIC_CONST_BITS = 32.0  # fixed-width code for numeric constants in clauses
ATOM_FORM_BITS = 2.0       # log2(4): atom form in {kind, attr_eq, rel, cmp}
CMP_OP_BITS = math.log2(5.0)


def universal_int(n: int) -> float:
    """Elias-gamma codelength of n + 1: 2 * floor(log2(n + 1)) + 1 bits."""
    if n < 0:
        raise ValueError("universal_int needs a non-negative integer")
    return 2.0 * math.floor(math.log2(n + 1)) + 1.0


def bernoulli_bits(n_applicable: int, n_satisfied: int) -> float:
    """Outcome codeword total for a clause: each satisfied node costs
    -log2(p) and each violated node -log2(1 - p), with the Laplace smoothed
    confidence p = (s + 1) / (a + 2)."""
    if not (0 <= n_satisfied <= n_applicable):
        raise ValueError("need 0 <= n_satisfied <= n_applicable")
    if n_applicable == 0:
        return 0.0
    p = (n_satisfied + 1.0) / (n_applicable + 2.0)
    violated = n_applicable - n_satisfied
    return -n_satisfied * math.log2(p) - violated * math.log2(1.0 - p)


def _atom_cost(atom, schema: Schema, focus_kind: str) -> float:
    bits = ATOM_FORM_BITS
    n_attrs = max(len(schema.attr_names()), 1)
    if isinstance(atom, KindAtom):
        bits += math.log2(max(len(schema.kind_names()), 1))
    elif isinstance(atom, AttrEqAtom):
        bits += math.log2(n_attrs)
        bits += math.log2(schema.attr(focus_kind, atom.attr).vocab_size())
    elif isinstance(atom, NeighborAttrAtom):
        # costed like attr_eq: the attribute name identifies the neighbor kind
        bits += math.log2(n_attrs)
        bits += math.log2(schema.attr(atom.kind, atom.attr).vocab_size())
    elif isinstance(atom, CmpAtom):
        bits += math.log2(n_attrs) + CMP_OP_BITS + NUMERIC_CONST_BITS
    elif isinstance(atom, RelAtom):
        bits += math.log2(max(len(schema.relation_names()), 1))
    else:
        raise TypeError(f"unknown atom {atom}")
    return bits


def clause_cost(clause: Clause, schema: Schema) -> float:
    """Bits to encode one clause: universal_int(body length) plus per-atom
    form/selector/constant bits."""
    bits = universal_int(len(clause.body))
    for atom in clause.atoms():
        bits += _atom_cost(atom, schema, clause.focus_kind)
    return bits


def grammar_cost(grammar: Grammar, schema: Schema) -> float:
    """L(grammar) = universal_int(k) + sum clause costs + per-clause
    parameter cost 0.5 * log2(max(n_applicable, 1))."""
    bits = universal_int(len(grammar))
    for i, clause in enumerate(grammar.clauses):
        bits += clause_cost(clause, schema)
        bits += 0.5 * math.log2(max(grammar.n_applicable[i], 1))
    return bits


def data_cost(
    graph: ClinicalGraph,
    grammar: Grammar,
    freeze_stats: bool = False,
    index: GraphIndex | None = None,
) -> float:
    """Conditional data bits: the Bernoulli outcome codewords of every clause
    at every applicable node.

    By default the per-clause confidences are recounted from the graph; with
    ``freeze_stats`` the confidences stored on ``grammar`` are used instead
    (needed for marginal-score identities).
    """
    if len(grammar) == 0:
        return 0.0
    index = index or GraphIndex(graph)
    total = 0.0
    for i, clause in enumerate(grammar.clauses):
        applicable, violated = index.clause_masks(clause)
        a = int(applicable.sum())
        viol = int(violated.sum())
        if freeze_stats:
            p = grammar.confidence(i)
            total += -(a - viol) * math.log2(p) - viol * math.log2(1.0 - p)
        else:
            total += bernoulli_bits(a, a - viol)
    return total


@dataclass(frozen=True)
class MdlBreakdown:
    grammar_bits: float
    data_bits: float
    per_clause: list  # (clause text, param_bits, exception_bits)
    total_bits: float

    def to_json(self) -> dict:
        return {
            "grammar_bits": self.grammar_bits,
            "data_bits": self.data_bits,
            "per_clause": [
                {"clause": text, "param_bits": pb, "exception_bits": eb}
                for text, pb, eb in self.per_clause
            ],
            "total_bits": self.total_bits,
        }


def total_mdl(graph: ClinicalGraph, grammar: Grammar, index: GraphIndex | None = None) -> MdlBreakdown:
    """Two-part total with a per-clause breakdown; total = grammar + data."""
    index = index or GraphIndex(graph)
    per_clause = []
    data_bits = 0.0
    for clause in grammar.clauses:
        applicable, violated = index.clause_masks(clause)
        a = int(applicable.sum())
        viol = int(violated.sum())
        p = (a - viol + 1.0) / (a + 2.0)
        sat_bits = -(a - viol) * math.log2(p)
        exc_bits = -viol * math.log2(1.0 - p) if viol else 0.0
        param_bits = clause_cost(clause, graph.schema) + 0.5 * math.log2(max(a, 1))
        per_clause.append((clause.print_form(), param_bits, sat_bits + exc_bits))
        data_bits += sat_bits + exc_bits
    grammar_bits = universal_int(len(grammar)) + sum(pb for _, pb, _ in per_clause)
    return MdlBreakdown(
        grammar_bits=grammar_bits,
        data_bits=data_bits,
        per_clause=per_clause,
        total_bits=grammar_bits + data_bits,
    )


# ---------------------------------------------------------------------------
# anomaly scoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClauseContribution:
    clause_index: int
    bits: float
    outcome: str  # "satisfied" | "violated"


@dataclass(frozen=True)
class AnomalyReport:
    node: int
    score: float
    flagged: bool
    contributions: tuple[ClauseContribution, ...]  # sorted by bits descending

    def top_clause(self) -> ClauseContribution | None:
        return self.contributions[0] if self.contributions else None


def anomaly_score(v: int, graph: ClinicalGraph, grammar: Grammar) -> float:
    """Marginal data bits of node v's clause outcomes at the grammar's frozen
    confidences.  Nodes where no clause applies score exactly 0."""
    from .logic import crisp_sat

    if not (0 <= v < graph.node_count):
        raise MissingNode(f"node {v} does not exist")
    total = 0.0
    for i, clause in enumerate(grammar.clauses):
        result = crisp_sat(clause, v, graph)
        if result.status == "not_applicable":
            continue
        p = grammar.confidence(i)
        total += -math.log2(1.0 - p) if result.status == "violated" else -math.log2(p)
    return total


def calibrate_threshold(scores, method: str = "quantile", value: float = 0.995) -> float:
    """Select the flagging threshold from a score sample.

    method "quantile": linear-interpolation quantile at ``value``;
    method "sigma": mean + value * population standard deviation.
    """
    scores = np.asarray(list(scores), dtype=float)
    if scores.size == 0:
        raise EmptyInput("cannot calibrate a threshold from no scores")
    if method == "quantile":
        if not (0.0 <= value <= 1.0):
            raise ValueError("quantile must be in [0, 1]")
        return float(np.quantile(scores, value))
    if method == "sigma":
        return float(scores.mean() + value * scores.std())
    raise ValueError(f"unknown calibration method {method!r}")


def score_all(
    graph: ClinicalGraph,
    grammar: Grammar,
    threshold: float,
    index: GraphIndex | None = None,
    allowlist: set[int] | None = None,
) -> list[AnomalyReport]:
    """One AnomalyReport per node, sorted by score descending then NodeId.

    Vectorized: per clause, outcome bits are scattered over the applicable
    mask.  ``allowlist`` nodes are never flagged (reviewer-accepted records).
    """
    index = index or GraphIndex(graph)
    n = graph.node_count
    scores = np.zeros(n)
    per_node: list[list[ClauseContribution]] = [[] for _ in range(n)]
    for i, clause in enumerate(grammar.clauses):
        applicable, violated = index.clause_masks(clause)
        p = grammar.confidence(i)
        sat_bits = -math.log2(p)
        viol_bits = -math.log2(1.0 - p)
        sat_mask = applicable & ~violated
        scores[sat_mask] += sat_bits
        scores[violated] += viol_bits
        for v in np.flatnonzero(sat_mask):
            per_node[v].append(ClauseContribution(i, sat_bits, "satisfied"))
        for v in np.flatnonzero(violated):
            per_node[v].append(ClauseContribution(i, viol_bits, "violated"))
    allowlist = allowlist or set()
    reports = []
    for v in range(n):
        contributions = tuple(sorted(per_node[v], key=lambda c: (-c.bits, c.clause_index)))
        flagged = scores[v] > threshold and v not in allowlist
        reports.append(AnomalyReport(node=v, score=float(scores[v]), flagged=flagged, contributions=contributions))
    reports.sort(key=lambda r: (-r.score, r.node))
    return reports


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def export_scores_csv(reports: list[AnomalyReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "score_bits", "flagged", "top_clause", "top_clause_bits"])
        for report in reports:
            top = report.top_clause()
            writer.writerow(
                [
                    report.node,
                    repr(report.score),
                    int(report.flagged),
                    top.clause_index if top else "",
                    repr(top.bits) if top else "",
                ]
            )


def export_breakdown_json(breakdown: MdlBreakdown, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(breakdown.to_json(), fh, indent=2)
        fh.write("\n")
