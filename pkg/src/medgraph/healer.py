"""Self-healing repair search over flagged nodes.

The search identifies the clauses a node crisply violates, takes the
gradient of the soft anomaly score over relaxed attributes, and enumerates
single edits along descent coordinates: categorical flips toward values
whose simplex coordinate has negative gradient, numeric values driven by
projected descent and snapped to the nearest legal integer satisfying the
comparison, and removal of the edges witnessing a violated body.  Every
candidate is verified by re-scoring a patched copy of the graph at frozen
clause confidences, so predicted scores are exact, not estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import IllegalEdit, MissingNode, NoRepairFound, StaleCandidate
from .graph import ClinicalGraph
from .logic import AttrEqAtom, Clause, CmpAtom, Grammar, crisp_sat, soft_eval
from .mdl import AnomalyReport, anomaly_score

GRAD_EPS = 1e-12


@dataclass(frozen=True)
class Edit:
    """One reversible graph edit."""

    op: str                     # "set_attr" | "remove_edge" | "shift_timestamp"
    attr: str | None = None
    old_value: object = None
    new_value: object = None
    edge_id: int | None = None
    old_t: int | None = None
    new_t: int | None = None

    def describe(self, graph: ClinicalGraph | None = None) -> str:
        if self.op == "set_attr":
            return f"{self.attr}: {self.old_value} -> {self.new_value}"
        if self.op == "remove_edge":
            rel = graph.edge(self.edge_id).relation if graph is not None else "?"
            return f"remove edge #{self.edge_id} ({rel})"
        return f"shift edge #{self.edge_id} time {self.old_t} -> {self.new_t}"


@dataclass(frozen=True)
class RepairCandidate:
    node: int
    edits: tuple[Edit, ...]
    predicted_score_after: float
    edit_cost: float
    rank: int
    graph_version: int
    description: str


@dataclass
class RelaxedNode:
    """Continuous relaxation of one node's attributes: a probability simplex
    per categorical/boolean attribute and a free real per numeric one."""

    categorical: dict = field(default_factory=dict)   # attr -> {value: prob}
    numeric: dict = field(default_factory=dict)       # attr -> float

    def validate(self) -> None:
        for attr, simplex in self.categorical.items():
            total = sum(simplex.values())
            if abs(total - 1.0) > 1e-9 or any(p < 0 for p in simplex.values()):
                raise ValueError(f"relaxation of {attr!r} is not a probability simplex")

    def as_relaxation(self) -> dict:
        out: dict = dict(self.numeric)
        out.update(self.categorical)
        return out


def point_mass_relaxation(graph: ClinicalGraph, v: int) -> RelaxedNode:
    """Observed attributes as point masses / raw reals."""
    relaxed = RelaxedNode()
    kind = graph.node_kind(v)
    for name, value in graph.node_attrs(v).items():
        spec = graph.schema.attr(kind, name)
        if spec.type in ("numeric", "timestamp"):
            relaxed.numeric[name] = float(value)
        elif spec.type == "boolean":
            relaxed.categorical[name] = {True: 1.0 if value else 0.0, False: 0.0 if value else 1.0}
        else:
            relaxed.categorical[name] = {val: 1.0 if val == value else 0.0 for val in spec.values}
    return relaxed


def violated_clauses(v: int, grammar: Grammar, graph: ClinicalGraph) -> list[tuple[Clause, float, dict]]:
    """Crisply violated clauses at ``v`` with their exception-bit
    contributions, sorted by contribution descending (ties by clause index).
    The witness carries variable bindings and the body's supporting edges."""
    if not (0 <= v < graph.node_count):
        raise MissingNode(f"node {v} does not exist")
    out = []
    for i, clause in enumerate(grammar.clauses):
        result = crisp_sat(clause, v, graph)
        if result.status != "violated":
            continue
        bits = -math.log2(1.0 - grammar.confidence(i))
        out.append((i, clause, bits, {"bindings": result.witness, "edges": result.witness_edges}))
    out.sort(key=lambda item: (-item[2], item[0]))
    return [(clause, bits, witness) for _i, clause, bits, witness in out]


def soft_anomaly_score(
    v: int,
    grammar: Grammar,
    graph: ClinicalGraph,
    relaxed: RelaxedNode | None = None,
    temperature: float = 1.0,
) -> float:
    """Differentiable surrogate of the anomaly score: each clause contributes
    its expected codeword length -s*log2(p) - (1-s)*log2(1-p) under the soft
    satisfaction s."""
    relaxation = relaxed.as_relaxation() if relaxed is not None else None
    total = 0.0
    for i, clause in enumerate(grammar.clauses):
        s = soft_eval(clause, v, graph, relaxation, temperature).value
        p = grammar.confidence(i)
        total += -s * math.log2(p) - (1.0 - s) * math.log2(1.0 - p)
    return total


def soft_score_gradient(
    v: int,
    grammar: Grammar,
    graph: ClinicalGraph,
    relaxed: RelaxedNode | None = None,
    temperature: float = 1.0,
) -> tuple[float, dict]:
    """(soft score, gradient) over the relaxed coordinates.

    Gradient keys: ("cat", attr, value) for simplex entries, ("num", attr)
    for numeric values.  Matches central finite differences to 1e-4 relative
    error (verified in tests).
    """
    if relaxed is None:
        relaxed = point_mass_relaxation(graph, v)
    relaxed.validate()
    relaxation = relaxed.as_relaxation()
    total = 0.0
    grad: dict = {}
    for i, clause in enumerate(grammar.clauses):
        result = soft_eval(clause, v, graph, relaxation, temperature)
        p = grammar.confidence(i)
        total += -result.value * math.log2(p) - (1.0 - result.value) * math.log2(1.0 - p)
        weight = math.log2((1.0 - p) / p)  # d score / d s
        for key, partial in result.coord_grad.items():
            grad[key] = grad.get(key, 0.0) + weight * partial
    return total, grad


# ---------------------------------------------------------------------------
# candidate enumeration
# ---------------------------------------------------------------------------

def _descend_numeric(
    v: int,
    attr: str,
    grammar: Grammar,
    graph: ClinicalGraph,
    relaxed: RelaxedNode,
    lo: float,
    hi: float,
    steps: int = 200,
) -> float:
    """Projected gradient descent on the soft score along one numeric
    coordinate; the relaxation temperature is range-scaled so the comparison
    sigmoids stay informative far from their boundary."""
    temperature = max((hi - lo) / 8.0, 1e-6)
    lr = (hi - lo) / 20.0
    x = relaxed.numeric[attr]
    for _ in range(steps):
        _, grad = soft_score_gradient(v, grammar, graph, relaxed, temperature)
        g = grad.get(("num", attr), 0.0)
        if abs(g) < GRAD_EPS:
            break
        x = min(max(x - lr * g, lo), hi)
        relaxed.numeric[attr] = x
    return x


def _snap_numeric(x: float, head: CmpAtom, lo: float, hi: float, integer: bool) -> float | int | None:
    """Nearest schema-legal value strictly satisfying the comparison."""
    c = head.constant
    if integer:
        target = {
            "<": min(math.floor(x), int(c) - 1),
            "<=": min(math.floor(x), int(c)),
            ">": max(math.ceil(x), int(c) + 1),
            ">=": max(math.ceil(x), int(c)),
            "=": int(c),
        }[head.op]
        target = int(min(max(target, lo), hi))
        ok = {"<": target < c, "<=": target <= c, ">": target > c, ">=": target >= c, "=": target == c}[head.op]
        return target if ok else None
    margin = max((hi - lo) * 1e-6, 1e-9)
    target = {"<": c - margin, "<=": c, ">": c + margin, ">=": c, "=": c}[head.op]
    target = float(min(max(min(x, target) if head.op in ("<", "<=") else max(x, target), lo), hi))
    ok = {"<": target < c, "<=": target <= c, ">": target > c, ">=": target >= c, "=": target == c}[head.op]
    return target if ok else None


@dataclass(frozen=True)
class RepairConfig:
    max_edits: int = 1
    beam: int = 8
    top_k: int = 3
    # per-edit costs: the total order behind "minimum attribute modification"
    cost_categorical: float = 1.0
    cost_edge_removal: float = 2.0
    cost_timestamp: float = 1.5


def _edit_cost(edit: Edit, kind: str, graph: ClinicalGraph, config: RepairConfig) -> float:
    if edit.op == "set_attr":
        spec = graph.schema.kinds[kind].get(edit.attr)
        if spec is not None and spec.type == "numeric":
            span = (spec.max - spec.min) or 1.0
            return abs(float(edit.new_value) - float(edit.old_value)) / span
        return config.cost_categorical
    if edit.op == "remove_edge":
        return config.cost_edge_removal
    return config.cost_timestamp


def _single_edits(v: int, grammar: Grammar, graph: ClinicalGraph, config: RepairConfig) -> list[Edit]:
    """Gradient-guided discrete edit proposals for one node."""
    kind = graph.node_kind(v)
    relaxed = point_mass_relaxation(graph, v)
    _, grad = soft_score_gradient(v, grammar, graph, relaxed, temperature=1.0)
    edits: list[Edit] = []
    # categorical flips toward strictly-descending coordinates
    for (space, *key), g in sorted(grad.items(), key=lambda item: item[1]):
        if space != "cat" or g >= -GRAD_EPS:
            continue
        attr, value = key
        current = graph.get_attr(v, attr)
        if value == current or current is None:
            continue
        edits.append(Edit(op="set_attr", attr=attr, old_value=current, new_value=value))
    # numeric attributes: projected descent confirms the repair direction;
    # the snap then takes the satisfying value nearest the ORIGINAL (the
    # minimum modification, e.g. 17 for age<18 from any violating age)
    snapped: set[tuple[str, object]] = set()
    for clause, _bits, _witness in violated_clauses(v, grammar, graph):
        head = clause.head
        if not isinstance(head, CmpAtom):
            continue
        spec = graph.schema.attr(kind, head.attr)
        current = graph.get_attr(v, head.attr)
        descent = point_mass_relaxation(graph, v)
        x = _descend_numeric(v, head.attr, grammar, graph, descent, spec.min, spec.max)
        if x == float(current):
            continue  # flat: descent found no direction
        target = _snap_numeric(float(current), head, spec.min, spec.max, spec.integer)
        if target is None:
            continue
        if target == current or (head.attr, target) in snapped:
            continue
        snapped.add((head.attr, target))
        edits.append(Edit(op="set_attr", attr=head.attr, old_value=current, new_value=target))
    # witness edge removals
    seen_edges: set[int] = set()
    for _clause, _bits, witness in violated_clauses(v, grammar, graph):
        for eid in witness["edges"]:
            if eid in seen_edges:
                continue
            seen_edges.add(eid)
            edits.append(Edit(op="remove_edge", edge_id=eid))
    return edits


def _apply_edit(graph: ClinicalGraph, v: int, edit: Edit) -> None:
    if edit.op == "set_attr":
        graph.set_attr(v, edit.attr, edit.new_value)
    elif edit.op == "remove_edge":
        graph.remove_edge(edit.edge_id)
    elif edit.op == "shift_timestamp":
        graph.shift_timestamp(edit.edge_id, edit.new_t)
    else:
        raise IllegalEdit(f"unknown edit op {edit.op!r}")


def repair_candidates(
    v: int,
    grammar: Grammar,
    graph: ClinicalGraph,
    config: RepairConfig = RepairConfig(),
) -> list[RepairCandidate]:
    """Top-k verified repair proposals for a flagged node.

    Ranking: (predicted score after, edit cost, lexicographic description).
    Raises NoRepairFound when no edit sequence within the budget strictly
    lowers the node's score.
    """
    if not (0 <= v < graph.node_count):
        raise MissingNode(f"node {v} does not exist")
    base_score = anomaly_score(v, graph, grammar)
    kind = graph.node_kind(v)
    beams: list[tuple[tuple[Edit, ...], float]] = [((), base_score)]
    complete: dict[str, tuple[tuple[Edit, ...], float, float]] = {}
    for _depth in range(max(config.max_edits, 1)):
        extensions: list[tuple[tuple[Edit, ...], float]] = []
        for edits, _score in beams:
            scratch = graph.copy()
            for edit in edits:
                _apply_edit(scratch, v, edit)
            for edit in _single_edits(v, grammar, scratch, config):
                candidate = edits + (edit,)
                patched = scratch.copy()
                try:
                    _apply_edit(patched, v, edit)
                except IllegalEdit:
                    continue
                score = anomaly_score(v, patched, grammar)
                cost = sum(_edit_cost(e, kind, graph, config) for e in candidate)
                description = "; ".join(e.describe(graph) for e in candidate)
                if score < base_score - 1e-12 and description not in complete:
                    complete[description] = (candidate, score, cost)
                extensions.append((candidate, score))
        extensions.sort(key=lambda item: item[1])
        beams = extensions[: config.beam]
        if not beams:
            break
    if not complete:
        raise NoRepairFound(f"no edit within budget lowers the score of node {v}")
    ranked = sorted(
        complete.items(),
        key=lambda item: (item[1][1], item[1][2], item[0]),
    )
    out = []
    for rank, (description, (edits, score, cost)) in enumerate(ranked[: config.top_k], start=1):
        out.append(
            RepairCandidate(
                node=v,
                edits=edits,
                predicted_score_after=score,
                edit_cost=cost,
                rank=rank,
                graph_version=graph.version,
                description=description,
            )
        )
    return out


def apply_repair(graph: ClinicalGraph, candidate: RepairCandidate, grammar: Grammar) -> tuple[list[Edit], AnomalyReport]:
    """Apply a candidate's edits atomically and re-score the node.

    The returned report's score equals candidate.predicted_score_after
    exactly (same code path, frozen confidences).  Raises StaleCandidate when
    the graph version moved since the proposal.
    """
    if candidate.graph_version != graph.version:
        raise StaleCandidate(
            f"candidate proposed at version {candidate.graph_version}, graph is at {graph.version}"
        )
    applied: list[Edit] = []
    try:
        for edit in candidate.edits:
            if edit.op == "set_attr" and graph.get_attr(candidate.node, edit.attr) != edit.old_value:
                raise IllegalEdit(f"attribute {edit.attr!r} changed since proposal")
            _apply_edit(graph, candidate.node, edit)
            applied.append(edit)
    except Exception:
        for edit in reversed(applied):
            _revert_edit(graph, candidate.node, edit)
        raise
    score = anomaly_score(candidate.node, graph, grammar)
    report = AnomalyReport(node=candidate.node, score=score, flagged=False, contributions=())
    return applied, report


def _revert_edit(graph: ClinicalGraph, v: int, edit: Edit) -> None:
    if edit.op == "set_attr":
        graph.set_attr(v, edit.attr, edit.old_value)
    elif edit.op == "remove_edge":
        graph.restore_edge(edit.edge_id)
    elif edit.op == "shift_timestamp":
        graph.shift_timestamp(edit.edge_id, edit.old_t)
