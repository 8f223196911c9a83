"""Clause DSL, crisp and soft satisfaction, and per-node consistency scores.

A clause is a material implication ``body -> head`` over a focus variable
``x`` bound to one node.  Atom forms:

    patient(x)                          kind test
    attr_eq(x, sex, female)             own-attribute equality
    diagnosis_attr(x, code, pregnancy)  1-hop neighbor of the named kind has
                                        the attribute value (existential)
    cmp(x, age, <, 18)                  numeric comparison, op in < <= > >= =
    rel(x, y, consultation)             edge x -> y with the named relation

Soft satisfaction is the expected crisp truth under independently relaxed
attributes; comparisons relax through a logistic sigmoid with a temperature.
Relational and neighbor atoms can additionally be weighted by an edge
strength in [0, 1], which is how embedding-derived link probabilities feed
logical consistency during training.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ClauseSyntaxError, MissingNode, UncoveredAttribute, UnknownSymbol
from .graph import ClinicalGraph
from .schema import Schema

CMP_OPS = ("<", "<=", ">", ">=", "=")


# ---------------------------------------------------------------------------
# atoms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KindAtom:
    kind: str

    def print_form(self, var: str = "x") -> str:
        return f"{self.kind}({var})"


@dataclass(frozen=True)
class AttrEqAtom:
    attr: str
    value: object  # str for categorical, bool for boolean

    def print_form(self, var: str = "x") -> str:
        return f"attr_eq({var}, {self.attr}, {_print_value(self.value)})"


@dataclass(frozen=True)
class NeighborAttrAtom:
    """Existential: some 1-hop neighbor (either edge direction) of the named
    kind carries the attribute value."""

    kind: str
    attr: str
    value: object

    def print_form(self, var: str = "x") -> str:
        return f"{self.kind}_attr({var}, {self.attr}, {_print_value(self.value)})"


@dataclass(frozen=True)
class CmpAtom:
    attr: str
    op: str
    constant: float

    def print_form(self, var: str = "x") -> str:
        return f"cmp({var}, {self.attr}, {self.op}, {_print_value(self.constant)})"


@dataclass(frozen=True)
class RelAtom:
    var: str  # second variable name
    relation: str

    def print_form(self, var: str = "x") -> str:
        return f"rel({var}, {self.var}, {self.relation})"


Atom = KindAtom | AttrEqAtom | NeighborAttrAtom | CmpAtom | RelAtom


def _print_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and value == int(value):
        return str(int(value))
    return str(value)


# ---------------------------------------------------------------------------
# clause
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Clause:
    """body -> head with an explicit focus kind resolved at parse time."""

    body: tuple[Atom, ...]
    head: Atom
    focus_kind: str

    def atoms(self) -> tuple[Atom, ...]:
        return self.body + (self.head,)

    def print_form(self) -> str:
        body = ", ".join(atom.print_form() for atom in self.body)
        return f"{body} -> {self.head.print_form()}"

    def __str__(self) -> str:
        return self.print_form()

    def own_attrs(self) -> list[str]:
        """Attribute names the clause reads on the focus node itself."""
        out = []
        for atom in self.atoms():
            if isinstance(atom, (AttrEqAtom, CmpAtom)) and atom.attr not in out:
                out.append(atom.attr)
        return out

    def has_explicit_vars(self) -> bool:
        return any(isinstance(a, RelAtom) for a in self.atoms())


@dataclass(frozen=True)
class SatResult:
    """Crisp satisfaction outcome: 'not_applicable' | 'satisfied' | 'violated'.

    For violations, ``witness`` maps variable names to node ids and
    ``witness_edges`` lists the edge ids that ground the body.
    """

    status: str
    witness: dict = field(default_factory=dict)
    witness_edges: tuple[int, ...] = ()

    @property
    def applicable(self) -> bool:
        return self.status != "not_applicable"


@dataclass
class Grammar:
    """An ordered set of clauses plus per-clause satisfaction statistics.

    Confidence uses Laplace smoothing, p = (satisfied + 1) / (applicable + 2),
    which keeps every codeword length finite even for perfect clauses.
    """

    clauses: list[Clause] = field(default_factory=list)
    n_applicable: list[int] = field(default_factory=list)
    n_satisfied: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.n_applicable:
            self.n_applicable = [0] * len(self.clauses)
        if not self.n_satisfied:
            self.n_satisfied = [0] * len(self.clauses)
        for a, s in zip(self.n_applicable, self.n_satisfied):
            if s > a:
                raise ValueError("n_satisfied cannot exceed n_applicable")

    def __len__(self) -> int:
        return len(self.clauses)

    def confidence(self, idx: int) -> float:
        return (self.n_satisfied[idx] + 1.0) / (self.n_applicable[idx] + 2.0)

    def confidences(self) -> list[float]:
        return [self.confidence(i) for i in range(len(self.clauses))]

    def refresh_stats(self, graph: ClinicalGraph) -> None:
        """Recount (applicable, satisfied) for every clause on ``graph``."""
        index = GraphIndex(graph)
        self.n_applicable = []
        self.n_satisfied = []
        for clause in self.clauses:
            applicable, violated = index.clause_masks(clause)
            self.n_applicable.append(int(applicable.sum()))
            self.n_satisfied.append(int((applicable & ~violated).sum()))

    # -- files ---------------------------------------------------------------

    def save(self, path: str | Path, stats_path: str | Path | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# induced interaction grammar: one clause per line\n")
            for clause in self.clauses:
                fh.write(clause.print_form() + "\n")
        if stats_path is not None:
            import json

            with open(stats_path, "w", encoding="utf-8") as fh:
                for i in range(len(self.clauses)):
                    fh.write(
                        json.dumps(
                            {"clause": i, "applicable": self.n_applicable[i], "satisfied": self.n_satisfied[i]}
                        )
                        + "\n"
                    )

    @classmethod
    def load(cls, path: str | Path, schema: Schema, stats_path: str | Path | None = None) -> "Grammar":
        clauses = []
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                clauses.append(parse_clause(line, schema))
        grammar = cls(clauses=clauses)
        if stats_path is not None:
            import json

            with open(stats_path, "r", encoding="utf-8") as fh:
                for raw in fh:
                    line = raw.strip()
                    if not line:
                        continue
                    doc = json.loads(line)
                    grammar.n_applicable[doc["clause"]] = doc["applicable"]
                    grammar.n_satisfied[doc["clause"]] = doc["satisfied"]
        return grammar


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"\s*(->|<=|>=|[(),]|=|<|>|[A-Za-z_][A-Za-z0-9_]*|-?\d+(?:\.\d+)?)")


def _tokenize(text: str) -> list[tuple[str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ClauseSyntaxError(pos, "a token", stripped[0])
        token = match.group(1)
        tokens.append((token, match.start(1)))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, text: str, schema: Schema):
        self.text = text
        self.schema = schema
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> str | None:
        return self.tokens[self.i][0] if self.i < len(self.tokens) else None

    def pos(self) -> int:
        return self.tokens[self.i][1] if self.i < len(self.tokens) else len(self.text)

    def take(self, expected: str | None = None) -> str:
        if self.i >= len(self.tokens):
            raise ClauseSyntaxError(len(self.text), expected or "more input")
        token, pos = self.tokens[self.i]
        if expected is not None and token != expected:
            raise ClauseSyntaxError(pos, repr(expected), token)
        self.i += 1
        return token

    def parse(self) -> Clause:
        if self.peek() == "->":
            raise ClauseSyntaxError(self.pos(), "a non-empty body before '->'", "->")
        body = [self.atom()]
        while self.peek() == ",":
            self.take(",")
            body.append(self.atom())
        self.take("->")
        head = self.atom()
        if self.i != len(self.tokens):
            raise ClauseSyntaxError(self.pos(), "end of clause", self.peek() or "")
        if len(body) > 2:
            raise ClauseSyntaxError(0, "a body with at most 2 atoms")
        focus = _resolve_focus_kind(tuple(body), head, self.schema)
        return Clause(body=tuple(body), head=head, focus_kind=focus)

    def atom(self) -> Atom:
        name_pos = self.pos()
        name = self.take()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise ClauseSyntaxError(name_pos, "an atom name", name)
        self.take("(")
        if name == "attr_eq":
            self.variable()
            self.take(",")
            attr = self.take()
            self.take(",")
            value = self.value_token()
            self.take(")")
            return AttrEqAtom(attr=attr, value=value)
        if name == "cmp":
            self.variable()
            self.take(",")
            attr = self.take()
            self.take(",")
            op_pos = self.pos()
            op = self.take()
            if op not in CMP_OPS:
                raise ClauseSyntaxError(op_pos, "a comparison op (< <= > >= =)", op)
            self.take(",")
            const_pos = self.pos()
            const = self.value_token()
            if not isinstance(const, (int, float)) or isinstance(const, bool):
                raise ClauseSyntaxError(const_pos, "a numeric constant", str(const))
            self.take(")")
            return CmpAtom(attr=attr, op=op, constant=float(const))
        if name == "rel":
            self.variable()
            self.take(",")
            var_pos = self.pos()
            var = self.take()
            if var == "x":
                raise ClauseSyntaxError(var_pos, "a variable other than x", var)
            self.take(",")
            relation = self.take()
            self.take(")")
            if relation not in self.schema.relation_names():
                raise UnknownSymbol(f"unknown relation {relation!r}")
            return RelAtom(var=var, relation=relation)
        if name.endswith("_attr") and len(name) > 5:
            kind = name[:-5]
            if not self.schema.has_kind(kind):
                raise UnknownSymbol(f"unknown kind {kind!r} in neighbor atom {name!r}")
            self.variable()
            self.take(",")
            attr = self.take()
            self.take(",")
            value = self.value_token()
            self.take(")")
            return NeighborAttrAtom(kind=kind, attr=attr, value=value)
        if self.schema.has_kind(name):
            self.variable()
            self.take(")")
            return KindAtom(kind=name)
        raise UnknownSymbol(f"unknown atom {name!r}")

    def variable(self) -> str:
        pos = self.pos()
        var = self.take()
        if var != "x":
            raise ClauseSyntaxError(pos, "the focus variable x", var)
        return var

    def value_token(self):
        token = self.take()
        if token == "true":
            return True
        if token == "false":
            return False
        if re.fullmatch(r"-?\d+(?:\.\d+)?", token):
            return float(token) if "." in token else int(token)
        return token


def _resolve_focus_kind(body: tuple[Atom, ...], head: Atom, schema: Schema) -> str:
    """The focus kind is the unique kind declaring every own-attribute the
    clause reads, intersected with any explicit kind atom."""
    candidates = set(schema.kind_names())
    for atom in body + (head,):
        if isinstance(atom, KindAtom):
            candidates &= {atom.kind}
        elif isinstance(atom, (AttrEqAtom, CmpAtom)):
            declared = set(schema.kinds_declaring(atom.attr))
            if not declared:
                raise UnknownSymbol(f"attribute {atom.attr!r} not declared by any kind")
            candidates &= declared
        elif isinstance(atom, NeighborAttrAtom):
            if atom.attr not in schema.kinds.get(atom.kind, {}):
                raise UnknownSymbol(f"kind {atom.kind!r} does not declare attribute {atom.attr!r}")
    if not candidates:
        raise UnknownSymbol("no kind declares every attribute used by the clause")
    if len(candidates) > 1:
        names = ", ".join(sorted(candidates))
        raise UnknownSymbol(
            f"ambiguous focus kind ({names}); add an explicit kind atom such as patient(x)"
        )
    (focus,) = candidates
    # validate categorical constants against the vocabulary they refer to
    for atom in body + (head,):
        if isinstance(atom, AttrEqAtom):
            _validate_attr_constant(schema, focus, atom.attr, atom.value)
        elif isinstance(atom, NeighborAttrAtom):
            _validate_attr_constant(schema, atom.kind, atom.attr, atom.value)
        elif isinstance(atom, CmpAtom):
            spec = schema.attr(focus, atom.attr)
            if spec.type not in ("numeric", "timestamp"):
                raise UnknownSymbol(f"cmp atom needs a numeric attribute, {atom.attr!r} is {spec.type}")
    return focus


def _validate_attr_constant(schema: Schema, kind: str, attr: str, value) -> None:
    spec = schema.attr(kind, attr)
    if spec.type == "categorical":
        if value not in spec.values:
            raise UnknownSymbol(f"value {value!r} not in vocabulary of {kind}.{attr}")
    elif spec.type == "boolean":
        if not isinstance(value, bool):
            raise UnknownSymbol(f"attribute {kind}.{attr} is boolean, got {value!r}")
    else:
        raise UnknownSymbol(f"attr_eq needs a categorical/boolean attribute, {attr!r} is {spec.type}")


def parse_clause(text: str, schema: Schema) -> Clause:
    """Parse clause text; raises ClauseSyntaxError or UnknownSymbol."""
    if not text.strip():
        raise ClauseSyntaxError(0, "a non-empty clause")
    return _Parser(text, schema).parse()


# ---------------------------------------------------------------------------
# crisp satisfaction (per-node reference semantics)
# ---------------------------------------------------------------------------

def _own_atom_truth(atom: Atom, graph: ClinicalGraph, v: int) -> bool:
    if isinstance(atom, KindAtom):
        return graph.node_kind(v) == atom.kind
    if isinstance(atom, AttrEqAtom):
        return graph.get_attr(v, atom.attr) == atom.value
    if isinstance(atom, CmpAtom):
        value = graph.get_attr(v, atom.attr)
        if value is None:
            return False
        return _cmp(value, atom.op, atom.constant)
    raise TypeError(f"not an own atom: {atom}")


def _cmp(value: float, op: str, constant: float) -> bool:
    if op == "<":
        return value < constant
    if op == "<=":
        return value <= constant
    if op == ">":
        return value > constant
    if op == ">=":
        return value >= constant
    return value == constant


def _neighbor_matches(atom: NeighborAttrAtom, graph: ClinicalGraph, v: int) -> list[tuple[int, int]]:
    """(neighbor, edge_id) pairs witnessing the existential neighbor atom."""
    out = []
    for other, edge in graph.neighbors(v):
        if graph.node_kind(other) == atom.kind and graph.get_attr(other, atom.attr) == atom.value:
            out.append((other, edge.edge_id))
    return out


def crisp_sat(clause: Clause, v: int, graph: ClinicalGraph) -> SatResult:
    """Material implication over all groundings rooted at x := v within a
    1-hop relation radius.

    not_applicable when v's kind is not the clause's focus kind or no
    grounding satisfies the body; violated when some body-satisfying
    grounding falsifies the head (first witness in NodeId order).
    """
    if not (0 <= v < graph.node_count):
        raise MissingNode(f"node {v} does not exist")
    if graph.node_kind(v) != clause.focus_kind:
        return SatResult("not_applicable")

    rel_vars = sorted({a.var for a in clause.atoms() if isinstance(a, RelAtom)})
    if not rel_vars:
        edges: list[int] = []
        body_true = True
        for atom in clause.body:
            if isinstance(atom, NeighborAttrAtom):
                matches = _neighbor_matches(atom, graph, v)
                if not matches:
                    body_true = False
                    break
                edges.extend(eid for _, eid in matches)
            elif not _own_atom_truth(atom, graph, v):
                body_true = False
                break
        if not body_true:
            return SatResult("not_applicable")
        head = clause.head
        if isinstance(head, NeighborAttrAtom):
            head_true = bool(_neighbor_matches(head, graph, v))
        else:
            head_true = _own_atom_truth(head, graph, v)
        if head_true:
            return SatResult("satisfied", witness={"x": v}, witness_edges=tuple(sorted(set(edges))))
        return SatResult("violated", witness={"x": v}, witness_edges=tuple(sorted(set(edges))))

    # explicit second variables: ground each over the 1-hop neighborhood
    neighbor_pool = sorted({other for other, _ in graph.neighbors(v)})
    groundings = [{}]
    for var in rel_vars:
        groundings = [dict(g, **{var: u}) for g in groundings for u in neighbor_pool]

    def atom_truth(atom: Atom, g: dict) -> tuple[bool, list[int]]:
        if isinstance(atom, RelAtom):
            u = g[atom.var]
            eids = [
                e.edge_id
                for e in graph.incident_edges(v)
                if e.src == v and e.dst == u and e.relation == atom.relation
            ]
            return bool(eids), eids
        if isinstance(atom, NeighborAttrAtom):
            matches = _neighbor_matches(atom, graph, v)
            return bool(matches), [eid for _, eid in matches]
        return _own_atom_truth(atom, graph, v), []

    applicable = False
    for g in groundings:
        body_true = True
        edges = []
        for atom in clause.body:
            truth, eids = atom_truth(atom, g)
            if not truth:
                body_true = False
                break
            edges.extend(eids)
        if not body_true:
            continue
        applicable = True
        head_true, _ = atom_truth(clause.head, g)
        if not head_true:
            witness = {"x": v, **g}
            return SatResult("violated", witness=witness, witness_edges=tuple(sorted(set(edges))))
    if applicable:
        return SatResult("satisfied", witness={"x": v})
    return SatResult("not_applicable")


# ---------------------------------------------------------------------------
# soft satisfaction
# ---------------------------------------------------------------------------

def _logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _soft_cmp(value: float, op: str, constant: float, temperature: float) -> tuple[float, float]:
    """(probability, d probability / d value) of a relaxed comparison."""
    if op in ("<", "<="):
        p = _logistic((constant - value) / temperature)
        return p, -p * (1.0 - p) / temperature
    if op in (">", ">="):
        p = _logistic((value - constant) / temperature)
        return p, p * (1.0 - p) / temperature
    # equality: peaked bump, 1 at value == constant, decaying both sides
    lo = _logistic((constant - value) / temperature)
    hi = _logistic((value - constant) / temperature)
    p = 4.0 * lo * hi
    dp = 4.0 * (-lo * (1.0 - lo) * hi + lo * hi * (1.0 - hi)) / temperature
    return p, dp


@dataclass
class SoftEval:
    """Soft satisfaction plus analytic partials.

    ``coord_grad`` keys: ("cat", attr, value) for simplex entries and
    ("num", attr) for relaxed numeric values; ``edge_grad`` keys are edge
    ids (partials w.r.t. that edge's strength).
    """

    value: float
    coord_grad: dict = field(default_factory=dict)
    edge_grad: dict = field(default_factory=dict)


class _AtomProb:
    __slots__ = ("p", "coords", "edges")

    def __init__(self, p: float, coords: dict | None = None, edges: dict | None = None):
        self.p = p
        self.coords = coords or {}
        self.edges = edges or {}


def soft_eval(
    clause: Clause,
    v: int,
    graph: ClinicalGraph,
    relaxation: dict | None = None,
    temperature: float = 1e-9,
    edge_strength=None,
) -> SoftEval:
    """Expected crisp satisfaction of ``clause`` at ``v`` under independently
    relaxed own attributes, with exact partials.

    ``relaxation`` maps attribute name -> probability simplex (dict value ->
    prob) for categorical/boolean attributes, or -> float for numeric ones;
    omitted attributes keep their observed point mass.  ``edge_strength`` is
    an optional ``f(edge) -> [0,1]`` weighting for neighbor/rel atoms (crisp
    1.0 when None).  With point-mass relaxation and temperature -> 0 the
    value matches crisp_sat mapped to {0,1} with not_applicable -> 1.
    """
    if not (0 <= v < graph.node_count):
        raise MissingNode(f"node {v} does not exist")
    if graph.node_kind(v) != clause.focus_kind:
        return SoftEval(1.0)
    relaxation = relaxation or {}
    for attr in clause.own_attrs():
        if attr not in relaxation and graph.get_attr(v, attr) is None:
            raise UncoveredAttribute(f"attribute {attr!r} is neither observed nor relaxed at node {v}")

    def own_prob(atom: Atom) -> _AtomProb:
        if isinstance(atom, KindAtom):
            return _AtomProb(1.0 if graph.node_kind(v) == atom.kind else 0.0)
        if isinstance(atom, AttrEqAtom):
            if atom.attr in relaxation:
                simplex = relaxation[atom.attr]
                if not isinstance(simplex, dict):
                    raise UncoveredAttribute(f"attribute {atom.attr!r} needs a simplex relaxation")
                p = float(simplex.get(atom.value, 0.0))
                return _AtomProb(p, coords={("cat", atom.attr, atom.value): 1.0})
            return _AtomProb(1.0 if graph.get_attr(v, atom.attr) == atom.value else 0.0)
        if isinstance(atom, CmpAtom):
            if atom.attr in relaxation:
                value = float(relaxation[atom.attr])
                p, dp = _soft_cmp(value, atom.op, atom.constant, temperature)
                return _AtomProb(p, coords={("num", atom.attr): dp})
            value = float(graph.get_attr(v, atom.attr))
            p, _ = _soft_cmp(value, atom.op, atom.constant, temperature)
            return _AtomProb(p)
        raise TypeError(f"not an own atom: {atom}")

    def existential_prob(matches: list) -> _AtomProb:
        """1 - prod(1 - strength_k) over matching edges, with partials."""
        strengths = []
        for edge in matches:
            strengths.append((edge.edge_id, 1.0 if edge_strength is None else float(edge_strength(edge))))
        miss = 1.0
        for _, q in strengths:
            miss *= 1.0 - q
        edges = {}
        if edge_strength is not None:
            for i, (eid, _q) in enumerate(strengths):
                other = 1.0
                for j, (_e, qj) in enumerate(strengths):
                    if j != i:
                        other *= 1.0 - qj
                edges[eid] = edges.get(eid, 0.0) + other
        return _AtomProb(1.0 - miss, edges=edges)

    def neighbor_prob(atom: NeighborAttrAtom) -> _AtomProb:
        matches = [
            edge
            for other, edge in graph.neighbors(v)
            if graph.node_kind(other) == atom.kind and graph.get_attr(other, atom.attr) == atom.value
        ]
        return existential_prob(matches)

    def rel_prob(atom: RelAtom, g: dict) -> _AtomProb:
        u = g[atom.var]
        matches = [e for e in graph.incident_edges(v) if e.src == v and e.dst == u and e.relation == atom.relation]
        return existential_prob(matches)

    def atom_prob(atom: Atom, g: dict) -> _AtomProb:
        if isinstance(atom, RelAtom):
            return rel_prob(atom, g)
        if isinstance(atom, NeighborAttrAtom):
            return neighbor_prob(atom)
        return own_prob(atom)

    rel_vars = sorted({a.var for a in clause.atoms() if isinstance(a, RelAtom)})
    groundings: list[dict] = [{}]
    if rel_vars:
        neighbor_pool = sorted({other for other, _ in graph.neighbors(v)})
        for var in rel_vars:
            groundings = [dict(g, **{var: u}) for g in groundings for u in neighbor_pool]

    terms = []  # (t_g, dt_g as {key: partial}) with keys from both coord and edge spaces
    for g in groundings:
        body = [atom_prob(atom, g) for atom in clause.body]
        head = atom_prob(clause.head, g)
        p_body = 1.0
        for b in body:
            p_body *= b.p
        t = 1.0 - p_body * (1.0 - head.p)
        dt: dict = {}
        for i, b in enumerate(body):
            rest = 1.0
            for j, other in enumerate(body):
                if j != i:
                    rest *= other.p
            scale = -(1.0 - head.p) * rest
            for key, partial in b.coords.items():
                dt[("c", key)] = dt.get(("c", key), 0.0) + scale * partial
            for eid, partial in b.edges.items():
                dt[("e", eid)] = dt.get(("e", eid), 0.0) + scale * partial
        for key, partial in head.coords.items():
            dt[("c", key)] = dt.get(("c", key), 0.0) + p_body * partial
        for eid, partial in head.edges.items():
            dt[("e", eid)] = dt.get(("e", eid), 0.0) + p_body * partial
        terms.append((t, dt))

    value = 1.0
    for t, _ in terms:
        value *= t
    coord_grad: dict = {}
    edge_grad: dict = {}
    for i, (t, dt) in enumerate(terms):
        rest = 1.0
        for j, (tj, _) in enumerate(terms):
            if j != i:
                rest *= tj
        for (space, key), partial in dt.items():
            target = coord_grad if space == "c" else edge_grad
            target[key] = target.get(key, 0.0) + rest * partial
    return SoftEval(value, coord_grad, edge_grad)


def soft_sat(
    clause: Clause,
    v: int,
    graph: ClinicalGraph,
    relaxation: dict | None = None,
    temperature: float = 1e-9,
    edge_strength=None,
) -> float:
    """Soft satisfaction value; see soft_eval for the relaxation contract."""
    return soft_eval(clause, v, graph, relaxation, temperature, edge_strength).value


def consistency_score(v: int, grammar: Grammar, graph: ClinicalGraph) -> float:
    """Logical consistency H(v) = -sum_C (1 - S_C(v)) <= 0, with S_C the soft
    satisfaction at point-mass relaxation.  Clauses that do not apply
    contribute S = 1 (vacuous truth, zero penalty)."""
    total = 0.0
    for clause in grammar.clauses:
        result = crisp_sat(clause, v, graph)
        s = 0.0 if result.status == "violated" else 1.0
        total += 1.0 - s
    return -total


def violation_mass(v: int, grammar: Grammar, graph: ClinicalGraph) -> float:
    """V(v) = -H(v) >= 0: the count of crisply violated clauses at v."""
    return -consistency_score(v, grammar, graph)


# ---------------------------------------------------------------------------
# vectorized evaluation over a whole graph
# ---------------------------------------------------------------------------

class GraphIndex:
    """Columnar snapshot of a graph for vectorized clause evaluation.

    Build once per graph version; ``clause_masks`` then returns boolean
    (applicable, violated) arrays over all nodes.  Clauses with explicit rel
    variables fall back to the per-node reference evaluator.
    """

    def __init__(self, graph: ClinicalGraph):
        self.graph = graph
        self.n = graph.node_count
        kinds = graph.schema.kind_names()
        self.kind_code = {k: i for i, k in enumerate(kinds)}
        self.node_kind = np.array([self.kind_code[graph.node_kind(v)] for v in graph.node_ids()], dtype=np.int32)
        # attribute columns, keyed (kind, attr): float for numeric, object code for the rest
        self.columns: dict[tuple[str, str], np.ndarray] = {}
        self.kind_nodes: dict[str, np.ndarray] = {}
        for kind in kinds:
            members = np.flatnonzero(self.node_kind == self.kind_code[kind])
            self.kind_nodes[kind] = members
        self._build_columns()
        self._neighbor_cache: dict[tuple[str, str, object], np.ndarray] = {}
        self._undirected_pairs: np.ndarray | None = None

    def _build_columns(self) -> None:
        graph = self.graph
        for kind, attrs in graph.schema.kinds.items():
            members = self.kind_nodes[kind]
            for name, spec in attrs.items():
                if spec.type in ("numeric", "timestamp"):
                    col = np.full(self.n, np.nan)
                    for v in members:
                        value = graph.get_attr(int(v), name)
                        if value is not None:
                            col[v] = float(value)
                    self.columns[(kind, name)] = col
                else:
                    col = np.full(self.n, None, dtype=object)
                    for v in members:
                        col[v] = graph.get_attr(int(v), name)
                    self.columns[(kind, name)] = col

    def _pairs(self) -> np.ndarray:
        """(2, m) array of undirected (node, neighbor) pairs over live edges."""
        if self._undirected_pairs is None:
            rows = []
            for edge in self.graph.edges():
                rows.append((edge.src, edge.dst))
                if edge.src != edge.dst:
                    rows.append((edge.dst, edge.src))
            self._undirected_pairs = (
                np.array(rows, dtype=np.int64).T if rows else np.zeros((2, 0), dtype=np.int64)
            )
        return self._undirected_pairs

    def neighbor_pred(self, kind: str, attr: str, value) -> np.ndarray:
        """Boolean mask: node has some 1-hop neighbor of ``kind`` with
        attr == value."""
        key = (kind, attr, value)
        if key not in self._neighbor_cache:
            matches = np.zeros(self.n, dtype=bool)
            col = self.columns[(kind, attr)]
            target = col == value if col.dtype == object else np.isclose(col, float(value))
            pairs = self._pairs()
            if pairs.shape[1]:
                sel = target[pairs[1]]
                np.logical_or.at(matches, pairs[0][sel], True)
            self._neighbor_cache[key] = matches
        return self._neighbor_cache[key]

    def atom_mask(self, atom: Atom, focus_kind: str) -> np.ndarray:
        if isinstance(atom, KindAtom):
            return self.node_kind == self.kind_code[atom.kind]
        if isinstance(atom, AttrEqAtom):
            col = self.columns[(focus_kind, atom.attr)]
            if col.dtype == object:
                return col == atom.value
            return np.isclose(col, float(atom.value))
        if isinstance(atom, CmpAtom):
            col = self.columns[(focus_kind, atom.attr)]
            with np.errstate(invalid="ignore"):
                if atom.op == "<":
                    return col < atom.constant
                if atom.op == "<=":
                    return col <= atom.constant
                if atom.op == ">":
                    return col > atom.constant
                if atom.op == ">=":
                    return col >= atom.constant
                return col == atom.constant
        if isinstance(atom, NeighborAttrAtom):
            return self.neighbor_pred(atom.kind, atom.attr, atom.value)
        raise TypeError(f"cannot vectorize atom {atom}")

    def clause_masks(self, clause: Clause) -> tuple[np.ndarray, np.ndarray]:
        """(applicable, violated) boolean arrays over all node ids."""
        if clause.has_explicit_vars():
            applicable = np.zeros(self.n, dtype=bool)
            violated = np.zeros(self.n, dtype=bool)
            for v in self.kind_nodes[clause.focus_kind]:
                result = crisp_sat(clause, int(v), self.graph)
                if result.status == "violated":
                    applicable[v] = violated[v] = True
                elif result.status == "satisfied":
                    applicable[v] = True
            return applicable, violated
        focus = self.node_kind == self.kind_code[clause.focus_kind]
        body = focus.copy()
        for atom in clause.body:
            body &= self.atom_mask(atom, clause.focus_kind)
        head = self.atom_mask(clause.head, clause.focus_kind)
        return body, body & ~head

    def grammar_masks(self, grammar: Grammar) -> list[tuple[np.ndarray, np.ndarray]]:
        return [self.clause_masks(clause) for clause in grammar.clauses]
