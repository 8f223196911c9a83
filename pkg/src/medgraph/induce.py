"""Greedy compression-gain clause induction.

Candidates are enumerated from templates (bodies of at most two atoms, heads
on own attributes), and selected greedily by description-length gain: a
clause earns its place when coding its head event (head true/false at each
applicable node) with an adaptive Bernoulli code beats coding the same
events under the event's marginal probability over the focus population, by
more than the clause costs to write down.  The marginal null model means a
head that is merely globally common yields no gain; only genuinely
conditional structure compresses.  Head slots claimed by an accepted clause
are not credited again, so duplicates and shadowed variants fall out
naturally.  Candidates below the confidence floor are never admitted: a
grammar is a set of near-crisp implications, not a statistics table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import ClinicalGraph
from .logic import (
    AttrEqAtom,
    Clause,
    CmpAtom,
    GraphIndex,
    Grammar,
    KindAtom,
    NeighborAttrAtom,
    UnknownSymbol,
    _resolve_focus_kind,
)
from .mdl import bernoulli_bits, clause_cost, universal_int
from .schema import Schema


@dataclass(frozen=True)
class TemplateConfig:
    """Candidate enumeration and selection knobs."""

    min_support: int = 25
    budget: int = 40
    min_confidence: float = 0.8
    allow_neighbor_bodies: bool = True
    allow_paired_attr_bodies: bool = False
    cmp_ops: tuple[str, ...] = ("<", ">")
    lift_pruning: bool = False      # drop body/head value pairs with low co-occurrence lift
    lift_threshold: float = 1.1


@dataclass
class _Body:
    atoms: tuple
    focus_kind: str
    mask: np.ndarray
    support: int
    own_attrs: frozenset[str] = field(default_factory=frozenset)


def _discrete_attrs(schema: Schema, kind: str) -> list[str]:
    return [n for n, s in schema.kinds[kind].items() if s.type in ("categorical", "boolean")]


def _vocab(schema: Schema, kind: str, attr: str):
    spec = schema.attr(kind, attr)
    return [True, False] if spec.type == "boolean" else list(spec.values)


def _integer_attrs(schema: Schema, kind: str) -> list[str]:
    return [
        n for n, s in schema.kinds[kind].items()
        if s.type == "numeric" and s.integer
    ]


def _clause_for(body_atoms: tuple, head, schema: Schema, focus_kind: str) -> Clause | None:
    """Build a candidate clause, prepending an explicit kind atom when the
    focus kind cannot be inferred from the attributes alone."""
    try:
        inferred = _resolve_focus_kind(body_atoms, head, schema)
        if inferred == focus_kind:
            return Clause(body=body_atoms, head=head, focus_kind=focus_kind)
    except UnknownSymbol:
        pass
    widened = (KindAtom(focus_kind),) + body_atoms
    if len(widened) > 2:
        return None
    try:
        inferred = _resolve_focus_kind(widened, head, schema)
    except UnknownSymbol:
        return None
    if inferred != focus_kind:
        return None
    return Clause(body=widened, head=head, focus_kind=focus_kind)


class _Inducer:
    def __init__(self, graph: ClinicalGraph, config: TemplateConfig):
        self.graph = graph
        self.schema = graph.schema
        self.config = config
        self.index = GraphIndex(graph)
        self.n = graph.node_count
        self._baselines: dict[tuple[str, str], np.ndarray] = {}
        self.bodies = self._enumerate_bodies()
        # coverage: attr name -> mask of nodes whose head slot is already paid for
        self.covered: dict[str, np.ndarray] = {}

    # -- marginal event probabilities -------------------------------------------

    def _event_marginal(self, kind: str, attr: str, value) -> float:
        """Laplace-smoothed marginal probability of the head event
        ``attr == value`` over the kind's population."""
        key = (kind, attr, value)
        if key not in self._baselines:
            col = self.index.columns[(kind, attr)]
            members = self.index.kind_nodes[kind]
            count = int((col[members] == value).sum())
            self._baselines[key] = (count + 1.0) / (len(members) + 2.0)
        return self._baselines[key]

    def _sorted_kind_values(self, kind: str, attr: str) -> np.ndarray:
        key = (kind, attr, "__sorted__")
        if key not in self._baselines:
            col = self.index.columns[(kind, attr)]
            values = col[self.index.kind_nodes[kind]]
            self._baselines[key] = np.sort(values[~np.isnan(values)])
        return self._baselines[key]

    @staticmethod
    def _event_bits(a: int, s: int, pm: float) -> float:
        """Savings of coding ``s`` of ``a`` head-true outcomes adaptively
        instead of under the marginal event probability ``pm``."""
        baseline = -s * math.log2(pm) - (a - s) * math.log2(1.0 - pm)
        return baseline - bernoulli_bits(a, s)

    # -- candidate bodies ---------------------------------------------------------

    def _enumerate_bodies(self) -> list[_Body]:
        bodies: list[_Body] = []
        min_support = self.config.min_support
        for kind in self.schema.kind_names():
            focus_mask = self.index.node_kind == self.index.kind_code[kind]
            for attr in _discrete_attrs(self.schema, kind):
                for value in _vocab(self.schema, kind, attr):
                    atom = AttrEqAtom(attr=attr, value=value)
                    mask = focus_mask & self.index.atom_mask(atom, kind)
                    support = int(mask.sum())
                    if support >= min_support:
                        bodies.append(_Body((atom,), kind, mask, support, frozenset([attr])))
            if not self.config.allow_neighbor_bodies:
                continue
            for nkind in self.schema.kind_names():
                if nkind == kind:
                    continue
                for attr in _discrete_attrs(self.schema, nkind):
                    for value in _vocab(self.schema, nkind, attr):
                        atom = NeighborAttrAtom(kind=nkind, attr=attr, value=value)
                        mask = focus_mask & self.index.neighbor_pred(nkind, attr, value)
                        support = int(mask.sum())
                        if support >= min_support:
                            bodies.append(_Body((atom,), kind, mask, support))
        if self.config.allow_paired_attr_bodies:
            singles = [b for b in bodies if len(b.atoms) == 1 and isinstance(b.atoms[0], AttrEqAtom)]
            for i, first in enumerate(singles):
                for second in singles[i + 1:]:
                    if first.focus_kind != second.focus_kind:
                        continue
                    if first.own_attrs & second.own_attrs:
                        continue
                    mask = first.mask & second.mask
                    support = int(mask.sum())
                    if support >= self.config.min_support:
                        bodies.append(
                            _Body(
                                first.atoms + second.atoms,
                                first.focus_kind,
                                mask,
                                support,
                                first.own_attrs | second.own_attrs,
                            )
                        )
        return bodies

    # -- gain -----------------------------------------------------------------

    def _covered_mask(self, attr: str) -> np.ndarray:
        if attr not in self.covered:
            self.covered[attr] = np.zeros(self.n, dtype=bool)
        return self.covered[attr]

    def _model_bits(self, clause: Clause, support: int, k: int) -> float:
        return (
            clause_cost(clause, self.schema)
            + 0.5 * math.log2(max(support, 1))
            + universal_int(k + 1)
            - universal_int(k)
        )

    def _categorical_candidates(self, body: _Body, attr: str, k: int):
        """Yield (gain, clause) for every head value of a categorical attr."""
        vocab = _vocab(self.schema, body.focus_kind, attr)
        col = self.index.columns[(body.focus_kind, attr)]
        unc = body.mask & ~self._covered_mask(attr)
        a = int(unc.sum())
        if a == 0:
            return
        values = col[unc]
        kind_size = len(self.index.kind_nodes[body.focus_kind])
        for value in vocab:
            s = int((values == value).sum())
            if s < self.config.min_confidence * a:
                continue
            if self.config.lift_pruning:
                head_count = int((col[self.index.kind_nodes[body.focus_kind]] == value).sum())
                expected = a * head_count / max(kind_size, 1)
                if expected > 0 and s / expected < self.config.lift_threshold:
                    continue
            head = AttrEqAtom(attr=attr, value=value)
            clause = _clause_for(body.atoms, head, self.schema, body.focus_kind)
            if clause is None:
                continue
            pm = self._event_marginal(body.focus_kind, attr, value)
            gain = self._event_bits(a, s, pm) - self._model_bits(clause, body.support, k)
            yield gain, clause

    def _cmp_candidates(self, body: _Body, attr: str, k: int):
        """Yield (gain, clause) for one-sided integer comparisons, sweeping
        every distinct conditional boundary."""
        spec = self.schema.attr(body.focus_kind, attr)
        lo, hi = int(spec.min), int(spec.max)
        col = self.index.columns[(body.focus_kind, attr)]
        unc = body.mask & ~self._covered_mask(attr) & ~np.isnan(col)
        a = int(unc.sum())
        if a == 0:
            return
        values = np.sort(col[unc])
        kind_values = self._sorted_kind_values(body.focus_kind, attr)
        n_kind = len(kind_values)
        distinct = np.unique(values)
        for op in self.config.cmp_ops:
            if op == "<":
                thresholds = distinct + 1
                sat = np.searchsorted(values, thresholds, side="left")
                marg = np.searchsorted(kind_values, thresholds, side="left")
            elif op == ">":
                thresholds = distinct - 1
                sat = a - np.searchsorted(values, thresholds, side="right")
                marg = n_kind - np.searchsorted(kind_values, thresholds, side="right")
            else:
                continue
            for c, s, m in zip(thresholds, sat, marg):
                s = int(s)
                if not (lo <= c <= hi):
                    continue
                if s < self.config.min_confidence * a:
                    continue
                head = CmpAtom(attr=attr, op=op, constant=float(c))
                clause = _clause_for(body.atoms, head, self.schema, body.focus_kind)
                if clause is None:
                    continue
                pm = (int(m) + 1.0) / (n_kind + 2.0)
                gain = self._event_bits(a, s, pm) - self._model_bits(clause, body.support, k)
                yield gain, clause

    def _best_candidate(self, k: int):
        best = None
        best_key = None
        for body in self.bodies:
            for attr in self.schema.kinds[body.focus_kind]:
                if attr in body.own_attrs:
                    continue
                spec = self.schema.attr(body.focus_kind, attr)
                if spec.type in ("categorical", "boolean"):
                    generator = self._categorical_candidates(body, attr, k)
                elif spec.type == "numeric" and spec.integer:
                    generator = self._cmp_candidates(body, attr, k)
                else:
                    continue
                for gain, clause in generator:
                    if gain <= 0:
                        continue
                    key = (-gain, len(clause.body), clause.print_form())
                    if best_key is None or key < best_key:
                        best, best_key = (gain, clause), key
        return best

    def run(self, budget: int, seeds: list[Clause] | None = None) -> Grammar:
        selected: list[Clause] = list(seeds or [])
        for clause in selected:
            applicable, _ = self.index.clause_masks(clause)
            head_attr = _head_attr(clause)
            if head_attr is not None:
                mask = self._covered_mask(head_attr)
                mask |= applicable
        while len(selected) < budget:
            best = self._best_candidate(len(selected))
            if best is None:
                break
            gain, clause = best
            selected.append(clause)
            applicable, _ = self.index.clause_masks(clause)
            head_attr = _head_attr(clause)
            mask = self._covered_mask(head_attr)
            mask |= applicable
        grammar = Grammar(clauses=selected)
        grammar.refresh_stats(self.graph)
        return grammar


def _head_attr(clause: Clause) -> str | None:
    head = clause.head
    if isinstance(head, (AttrEqAtom, CmpAtom)):
        return head.attr
    return None


def induce(
    graph: ClinicalGraph,
    template_config: TemplateConfig | None = None,
    budget: int | None = None,
    seeds: list[Clause] | None = None,
) -> Grammar:
    """Induce a grammar by greedy gain; deterministic given the graph.

    ``seeds`` are accepted verbatim (their head slots marked covered) before
    the greedy rounds, which makes induction idempotent on its own output.
    An empty grammar is a legal result.
    """
    if graph.node_count == 0:
        raise ValueError("cannot induce a grammar from an empty graph")
    config = template_config or TemplateConfig()
    inducer = _Inducer(graph, config)
    return inducer.run(budget if budget is not None else config.budget, seeds=seeds)


def compression_gain(graph: ClinicalGraph, grammar: Grammar) -> float:
    """Net description-length saving of a grammar over marginal head-event
    coding: the sum of each clause's induction gain with its full applicable
    set credited in clause order.  Positive means the grammar compresses."""
    config = TemplateConfig(min_support=0)
    inducer = _Inducer(graph, config)
    total = 0.0
    for k, clause in enumerate(grammar.clauses):
        head_attr = _head_attr(clause)
        if head_attr is None:
            continue
        applicable, violated = inducer.index.clause_masks(clause)
        unc = applicable & ~inducer._covered_mask(head_attr)
        a = int(unc.sum())
        if a == 0:
            total -= inducer._model_bits(clause, a, k)
            continue
        s = int((unc & ~violated).sum())
        head = clause.head
        if isinstance(head, AttrEqAtom):
            pm = inducer._event_marginal(clause.focus_kind, head_attr, head.value)
        else:
            kind_values = inducer._sorted_kind_values(clause.focus_kind, head_attr)
            n_kind = len(kind_values)
            if head.op in ("<", "<="):
                side = "left" if head.op == "<" else "right"
                m = int(np.searchsorted(kind_values, head.constant, side=side))
            else:
                side = "right" if head.op == ">" else "left"
                m = n_kind - int(np.searchsorted(kind_values, head.constant, side=side))
            pm = (m + 1.0) / (n_kind + 2.0)
        total += inducer._event_bits(a, s, pm) - inducer._model_bits(clause, int(applicable.sum()), k)
        mask = inducer._covered_mask(head_attr)
        mask |= applicable
    return total
