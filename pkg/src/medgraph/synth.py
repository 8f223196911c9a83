"""Seeded synthetic clinical corpora with a planted grammar, injected
logical violations, and injected rare-but-valid extremes.

Clean generation is generate-then-repair: node attributes are drawn from
declared base distributions, then planted clauses with own-attribute bodies
fix their head attribute in place, while clauses with neighbor-attribute
bodies restrict which endpoint a triggering event may link to.  Violations
corrupt exactly the head attribute of one planted clause per chosen node;
extremes push one numeric attribute beyond the 99.5th percentile of its
generating distribution while leaving every planted clause satisfied.

A single 64-bit seed drives one spawned random stream per generation phase,
so reproducibility does not depend on phase order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfeasibleConfig
from .graph import ClinicalGraph
from .logic import (
    AttrEqAtom,
    Clause,
    CmpAtom,
    GraphIndex,
    KindAtom,
    NeighborAttrAtom,
    crisp_sat,
    parse_clause,
)
from .schema import Schema

SECONDS_PER_YEAR = 31_536_000


# ---------------------------------------------------------------------------
# standard schema / grammar / distributions
# ---------------------------------------------------------------------------

def standard_schema() -> Schema:
    return Schema.from_json(
        {
            "kinds": {
                "patient": {
                    "attrs": {
                        "sex": {"type": "categorical", "values": ["male", "female"]},
                        "age": {"type": "numeric", "min": 0, "max": 100, "integer": True, "unit": "years"},
                        "blood_type": {"type": "categorical", "values": ["o", "a", "b", "ab"]},
                    }
                },
                "physician": {
                    "attrs": {
                        "specialty": {
                            "type": "categorical",
                            "values": ["cardiology", "oncology", "pediatrics", "obstetrics", "general_medicine"],
                        },
                        "seniority": {"type": "categorical", "values": ["junior", "attending", "senior"]},
                    }
                },
                "admission": {
                    "attrs": {
                        "ward": {
                            "type": "categorical",
                            "values": ["general", "cardiology", "oncology", "pediatric", "geriatric", "icu", "maternity"],
                        },
                        "age": {"type": "numeric", "min": 0, "max": 100, "integer": True, "unit": "years"},
                        "severity": {"type": "numeric", "min": 1, "max": 10, "integer": True, "unit": "score"},
                        "admission_type": {"type": "categorical", "values": ["emergency", "scheduled"]},
                    }
                },
                "diagnosis": {
                    "attrs": {
                        "code": {
                            "type": "categorical",
                            "values": [
                                "hypertension", "diabetes", "asthma", "flu", "fracture",
                                "appendicitis", "otitis", "pregnancy", "prostate_cancer", "measles",
                            ],
                        },
                        "stage": {"type": "numeric", "min": 1, "max": 4, "integer": True, "unit": "stage"},
                    }
                },
                "prescription": {
                    "attrs": {
                        "drug": {
                            "type": "categorical",
                            "values": ["antibiotic_a", "statin_c", "painkiller_p", "anticoag_b", "insulin", "chemo_x"],
                        },
                        "indication": {
                            "type": "categorical",
                            "values": ["infection", "cardiac", "other", "cancer", "acne", "diabetes"],
                        },
                        "route": {"type": "categorical", "values": ["oral", "iv"]},
                        "dose": {"type": "numeric", "min": 0.1, "max": 5000, "unit": "mg"},
                    }
                },
                "lab_test": {
                    "attrs": {
                        "test": {
                            "type": "categorical",
                            "values": ["blood_glucose", "hemoglobin", "creatinine", "cholesterol", "troponin"],
                        },
                        "unit": {"type": "categorical", "values": ["mg_dl", "g_dl", "iu_l", "mmol_l"]},
                        "priority": {"type": "categorical", "values": ["routine", "stat"]},
                        "result": {"type": "numeric", "min": 0, "max": 2000, "unit": "varies"},
                        "turnaround_hours": {"type": "numeric", "min": 0, "max": 96, "integer": True, "unit": "hours"},
                    }
                },
            },
            "relations": [
                ["patient", "consultation", "physician"],
                ["admission", "of_patient", "patient"],
                ["admission", "attended_by", "physician"],
                ["diagnosis", "of_patient", "patient"],
                ["diagnosis", "diagnosed_by", "physician"],
                ["prescription", "of_patient", "patient"],
                ["prescription", "prescribed_by", "physician"],
                ["lab_test", "of_patient", "patient"],
                ["lab_test", "ordered_by", "physician"],
            ],
        }
    )


STANDARD_CLAUSES = [
    "attr_eq(x, ward, pediatric) -> cmp(x, age, <, 18)",
    "attr_eq(x, ward, icu) -> cmp(x, severity, >, 6)",
    "attr_eq(x, ward, geriatric) -> cmp(x, age, >, 64)",
    "diagnosis_attr(x, code, pregnancy) -> attr_eq(x, sex, female)",
    "diagnosis_attr(x, code, prostate_cancer) -> attr_eq(x, sex, male)",
    "patient(x), diagnosis_attr(x, code, measles) -> cmp(x, age, <, 18)",
    "attr_eq(x, drug, chemo_x) -> attr_eq(x, route, iv)",
    "attr_eq(x, drug, insulin) -> attr_eq(x, indication, diabetes)",
    "attr_eq(x, test, blood_glucose) -> attr_eq(x, unit, mg_dl)",
    "attr_eq(x, priority, stat) -> cmp(x, turnaround_hours, <, 6)",
]

# base attribute distributions: {"choice": {...}} | {"uniform_int": [lo, hi]}
# | {"normal": [mu, sigma]} | {"lognormal": [mu, sigma]}
STANDARD_DISTRIBUTIONS = {
    "patient": {
        "sex": {"choice": {"male": 0.5, "female": 0.5}},
        "age": {"uniform_int": [0, 95]},
        "blood_type": {"choice": {"o": 0.4, "a": 0.35, "b": 0.15, "ab": 0.1}},
    },
    "physician": {
        "specialty": {"choice": {"cardiology": 0.2, "oncology": 0.2, "pediatrics": 0.2, "obstetrics": 0.2, "general_medicine": 0.2}},
        "seniority": {"choice": {"junior": 0.34, "attending": 0.33, "senior": 0.33}},
    },
    "admission": {
        "ward": {"choice": {"general": 0.3, "cardiology": 0.15, "oncology": 0.15, "pediatric": 0.1, "geriatric": 0.1, "icu": 0.1, "maternity": 0.1}},
        "age": {"uniform_int": [0, 95]},
        "severity": {"uniform_int": [1, 10]},
        "admission_type": {"choice": {"emergency": 0.5, "scheduled": 0.5}},
    },
    "diagnosis": {
        "code": {"choice": {"hypertension": 0.16, "diabetes": 0.14, "asthma": 0.11, "flu": 0.14, "fracture": 0.11, "appendicitis": 0.06, "otitis": 0.09, "pregnancy": 0.08, "prostate_cancer": 0.06, "measles": 0.05}},
        "stage": {"uniform_int": [1, 4]},
    },
    "prescription": {
        "drug": {"choice": {"antibiotic_a": 0.2, "statin_c": 0.2, "painkiller_p": 0.2, "anticoag_b": 0.15, "insulin": 0.15, "chemo_x": 0.1}},
        "indication": {"choice": {"infection": 0.22, "cardiac": 0.22, "other": 0.28, "cancer": 0.08, "acne": 0.1, "diabetes": 0.1}},
        "route": {"choice": {"oral": 0.7, "iv": 0.3}},
        "dose": {"lognormal": [3.0, 0.5]},
    },
    "lab_test": {
        "test": {"choice": {"blood_glucose": 0.25, "hemoglobin": 0.2, "creatinine": 0.2, "cholesterol": 0.2, "troponin": 0.15}},
        "unit": {"choice": {"mg_dl": 0.25, "g_dl": 0.25, "iu_l": 0.25, "mmol_l": 0.25}},
        "priority": {"choice": {"routine": 0.85, "stat": 0.15}},
        "result": {"normal": [110.0, 25.0]},
        "turnaround_hours": {"uniform_int": [0, 24]},
    },
}

EVENT_KINDS = ("admission", "diagnosis", "prescription", "lab_test")
STANDARD_EVENT_MIX = {"admission": 0.3, "diagnosis": 0.3, "prescription": 0.2, "lab_test": 0.2}
PHYSICIAN_RELATION = {
    "admission": "attended_by",
    "diagnosis": "diagnosed_by",
    "prescription": "prescribed_by",
    "lab_test": "ordered_by",
}
BOUNDARY_QUOTA = 5  # clean nodes pinned at each comparison boundary


@dataclass
class CorpusConfig:
    seed: int = 42
    n_patients: int = 800
    n_physicians: int = 50
    n_events: int = 5000
    violation_rate: float = 0.02
    extreme_rate: float = 0.02
    planted_clauses: list[str] = field(default_factory=lambda: list(STANDARD_CLAUSES))
    event_mix: dict = field(default_factory=lambda: dict(STANDARD_EVENT_MIX))
    distributions: dict = field(default_factory=lambda: json.loads(json.dumps(STANDARD_DISTRIBUTIONS)))

    def __post_init__(self):
        for rate in (self.violation_rate, self.extreme_rate):
            if not (0.0 <= rate <= 1.0):
                raise InfeasibleConfig(f"rate {rate} outside [0, 1]")
        if self.n_patients < 1 or self.n_physicians < 1:
            raise InfeasibleConfig("need at least one patient and one physician")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "n_patients": self.n_patients,
            "n_physicians": self.n_physicians,
            "n_events": self.n_events,
            "violation_rate": self.violation_rate,
            "extreme_rate": self.extreme_rate,
            "planted_clauses": list(self.planted_clauses),
            "event_mix": dict(self.event_mix),
            "distributions": self.distributions,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CorpusConfig":
        return cls(**{k: doc[k] for k in doc})


@dataclass
class GroundTruth:
    """Violation and extreme labels; the two sets are disjoint."""

    violations: dict = field(default_factory=dict)  # node -> (clause_idx, field, original_value)
    extremes: set = field(default_factory=set)

    def labels(self) -> list[dict]:
        rows = []
        for node in sorted(self.violations):
            clause_idx, attr, _original = self.violations[node]
            rows.append({"node": node, "label": "violation", "clause": clause_idx, "field": attr})
        for node in sorted(self.extremes):
            rows.append({"node": node, "label": "extreme", "clause": None, "field": None})
        return rows


def standard_config(**overrides) -> CorpusConfig:
    return CorpusConfig(**overrides)


# ---------------------------------------------------------------------------
# planted clause interpretation
# ---------------------------------------------------------------------------

@dataclass
class _Plant:
    index: int
    clause: Clause
    body_own: list          # [(attr, value)]
    body_neighbor: list     # [NeighborAttrAtom]
    head: object            # AttrEqAtom | CmpAtom


def _interpret(clauses: list[Clause]) -> list[_Plant]:
    plants = []
    for i, clause in enumerate(clauses):
        if not isinstance(clause.head, (AttrEqAtom, CmpAtom)):
            raise InfeasibleConfig(f"clause {i}: generator supports attr_eq/cmp heads only")
        body_own, body_neighbor = [], []
        for atom in clause.body:
            if isinstance(atom, AttrEqAtom):
                body_own.append((atom.attr, atom.value))
            elif isinstance(atom, NeighborAttrAtom):
                body_neighbor.append(atom)
            elif isinstance(atom, KindAtom):
                pass  # focus kind already resolved
            else:
                raise InfeasibleConfig(f"clause {i}: generator cannot plant atom {atom}")
        head_attr = clause.head.attr
        if any(attr == head_attr for attr, _ in body_own):
            raise InfeasibleConfig(f"clause {i}: head attribute also appears in the body")
        plants.append(_Plant(i, clause, body_own, body_neighbor, clause.head))
    return plants


def _satisfying_int_range(head: CmpAtom, lo: int, hi: int) -> tuple[int, int]:
    c = int(head.constant)
    if head.op == "<":
        return lo, min(c - 1, hi)
    if head.op == "<=":
        return lo, min(c, hi)
    if head.op == ">":
        return max(c + 1, lo), hi
    if head.op == ">=":
        return max(c, lo), hi
    return c, c


def _violating_int_range(head: CmpAtom, lo: int, hi: int) -> tuple[int, int]:
    """Violating side with a one-step margin off the boundary, so the soft
    comparison at vanishing temperature agrees with the crisp one."""
    c = int(head.constant)
    if head.op in ("<", "<="):
        start = c + (2 if head.op == "<" else 1)
        return min(start, hi), hi
    if head.op in (">", ">="):
        end = c - (2 if head.op == ">" else 1)
        return lo, max(end, lo)
    return lo, hi  # equality heads are not planted


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

class _Sampler:
    def __init__(self, schema: Schema, distributions: dict):
        self.schema = schema
        self.distributions = distributions

    def spec(self, kind: str, attr: str) -> dict:
        try:
            return self.distributions[kind][attr]
        except KeyError:
            raise InfeasibleConfig(f"no distribution declared for {kind}.{attr}") from None

    def draw(self, rng: np.random.Generator, kind: str, attr: str):
        spec = self.spec(kind, attr)
        decl = self.schema.attr(kind, attr)
        if "choice" in spec:
            values = list(spec["choice"].keys())
            weights = np.array(list(spec["choice"].values()), dtype=float)
            weights /= weights.sum()
            return values[int(rng.choice(len(values), p=weights))]
        if "uniform_int" in spec:
            lo, hi = spec["uniform_int"]
            return int(rng.integers(lo, hi + 1))
        if "normal" in spec:
            mu, sigma = spec["normal"]
            return float(np.clip(rng.normal(mu, sigma), decl.min, decl.max))
        if "lognormal" in spec:
            mu, sigma = spec["lognormal"]
            return float(np.clip(math.exp(rng.normal(mu, sigma)), decl.min, decl.max))
        raise InfeasibleConfig(f"unknown distribution spec for {kind}.{attr}: {spec}")

    def draw_satisfying(self, rng: np.random.Generator, kind: str, attr: str, head: CmpAtom):
        """Redraw a numeric value restricted to the head's satisfying side."""
        spec = self.spec(kind, attr)
        decl = self.schema.attr(kind, attr)
        if "uniform_int" in spec:
            base_lo, base_hi = spec["uniform_int"]
            lo, hi = _satisfying_int_range(head, base_lo, base_hi)
            if lo > hi:
                raise InfeasibleConfig(f"no satisfying value for {kind}.{attr} under {head.print_form()}")
            return int(rng.integers(lo, hi + 1))
        for _ in range(200):
            value = self.draw(rng, kind, attr)
            if _cmp_holds(value, head):
                return value
        raise InfeasibleConfig(f"rejection sampling failed for {kind}.{attr} under {head.print_form()}")

    def percentile_999_and_beyond(self, rng: np.random.Generator, kind: str, attr: str):
        """A value strictly beyond the 99.5th percentile of the generating
        distribution, within the declared range; None when the declared range
        leaves no headroom."""
        spec = self.spec(kind, attr)
        decl = self.schema.attr(kind, attr)
        if "uniform_int" in spec:
            _, base_hi = spec["uniform_int"]
            if base_hi + 1 > decl.max:
                return None
            return int(rng.integers(base_hi + 1, int(decl.max) + 1))
        if "normal" in spec:
            mu, sigma = spec["normal"]
            value = mu + sigma * (2.576 + 4.0 * rng.random())
            return float(min(value, decl.max)) if value > mu + sigma * 2.576 else None
        if "lognormal" in spec:
            mu, sigma = spec["lognormal"]
            value = math.exp(mu + sigma * (2.576 + 1.5 * rng.random()))
            return float(min(value, decl.max))
        return None


def _cmp_holds(value, head: CmpAtom) -> bool:
    c = head.constant
    return {"<": value < c, "<=": value <= c, ">": value > c, ">=": value >= c, "=": value == c}[head.op]


def generate(config: CorpusConfig, schema: Schema | None = None) -> tuple[ClinicalGraph, GroundTruth]:
    """Build (graph, truth); fully deterministic given config.seed."""
    schema = schema or standard_schema()
    clauses = [parse_clause(text, schema) for text in config.planted_clauses]
    plants = _interpret(clauses)
    sampler = _Sampler(schema, config.distributions)

    streams = np.random.SeedSequence(config.seed).spawn(5)
    rng_people = np.random.default_rng(streams[0])
    rng_events = np.random.default_rng(streams[1])
    rng_repair = np.random.default_rng(streams[2])
    rng_viol = np.random.default_rng(streams[3])
    rng_ext = np.random.default_rng(streams[4])

    graph = ClinicalGraph(schema)
    repair_plants = [p for p in plants if not p.body_neighbor]
    elig_plants = [p for p in plants if p.body_neighbor]

    def draw_node_attrs(rng, kind: str) -> dict:
        attrs = {attr: sampler.draw(rng, kind, attr) for attr in schema.kinds[kind]}
        # repair pass: clauses whose own-attribute body holds must see a true head
        for _ in range(5):
            dirty = False
            for plant in repair_plants:
                if plant.clause.focus_kind != kind:
                    continue
                if not all(attrs.get(a) == v for a, v in plant.body_own):
                    continue
                head = plant.head
                if isinstance(head, AttrEqAtom):
                    if attrs.get(head.attr) != head.value:
                        attrs[head.attr] = head.value
                        dirty = True
                else:
                    if not _cmp_holds(attrs[head.attr], head):
                        attrs[head.attr] = sampler.draw_satisfying(rng_repair, kind, head.attr, head)
                        dirty = True
            if not dirty:
                return attrs
        raise InfeasibleConfig("planted clauses did not stabilize under head repair")

    patients = [graph.add_node("patient", draw_node_attrs(rng_people, "patient")) for _ in range(config.n_patients)]
    physicians = [graph.add_node("physician", draw_node_attrs(rng_people, "physician")) for _ in range(config.n_physicians)]

    def head_holds_at(node: int, head) -> bool:
        if isinstance(head, AttrEqAtom):
            return graph.get_attr(node, head.attr) == head.value
        return _cmp_holds(graph.get_attr(node, head.attr), head)

    # eligibility: linking a triggering event restricts the patient pool to
    # nodes on which the clause head (and any own-body atoms) already hold
    def eligible_patients(kind: str, attrs: dict) -> list[int]:
        pool = patients
        for plant in elig_plants:
            if plant.clause.focus_kind != "patient":
                continue
            trigger = all(
                atom.kind == kind and attrs.get(atom.attr) == atom.value
                for atom in plant.body_neighbor
            )
            if not trigger:
                continue
            pool = [
                p for p in pool
                if head_holds_at(p, plant.head)
                or not all(graph.get_attr(p, a) == v for a, v in plant.body_own)
            ]
        if not pool:
            raise InfeasibleConfig("no eligible patient satisfies the planted heads")
        return pool

    counts = _event_counts(config.n_events, config.event_mix)
    schedule = np.repeat(
        np.array([k for k in EVENT_KINDS if counts.get(k)], dtype=object),
        [counts[k] for k in EVENT_KINDS if counts.get(k)],
    )
    schedule = schedule[rng_events.permutation(len(schedule))]

    event_nodes = []
    for kind in schedule:
        attrs = draw_node_attrs(rng_events, kind)
        node = graph.add_node(kind, attrs)
        event_nodes.append(node)
        t = int(rng_events.integers(0, SECONDS_PER_YEAR))
        patient = int(rng_events.choice(eligible_patients(kind, attrs)))
        physician = int(rng_events.choice(physicians))
        graph.add_edge(node, patient, "of_patient", t)
        graph.add_edge(node, physician, PHYSICIAN_RELATION[kind], t)
        if kind == "admission":
            graph.add_edge(patient, physician, "consultation", t)

    _pin_boundaries(graph, plants)
    _assert_clean(graph, clauses)

    truth = GroundTruth()
    n_violations = math.floor(config.violation_rate * config.n_events)
    _inject_violations(graph, plants, n_violations, truth, rng_viol)
    n_extremes = math.floor(config.extreme_rate * config.n_events)
    _inject_extremes(graph, clauses, sampler, n_extremes, truth, rng_ext)
    return graph, truth


def _event_counts(n_events: int, mix: dict) -> dict:
    shares = {k: mix.get(k, 0.0) for k in EVENT_KINDS}
    total = sum(shares.values())
    if total <= 0:
        raise InfeasibleConfig("event mix must have positive total share")
    raw = {k: n_events * v / total for k, v in shares.items()}
    counts = {k: math.floor(raw[k]) for k in EVENT_KINDS}
    remainder = n_events - sum(counts.values())
    by_frac = sorted(EVENT_KINDS, key=lambda k: (raw[k] - counts[k], k), reverse=True)
    for k in by_frac[:remainder]:
        counts[k] += 1
    return counts


def _pin_boundaries(graph: ClinicalGraph, plants: list[_Plant]) -> None:
    """Give each comparison-headed clause a handful of clean nodes at the
    tight boundary so induced thresholds match the planted constants."""
    index = GraphIndex(graph)
    for plant in plants:
        head = plant.head
        if not isinstance(head, CmpAtom):
            continue
        decl = graph.schema.attr(plant.clause.focus_kind, head.attr)
        lo, hi = _satisfying_int_range(head, int(decl.min), int(decl.max))
        boundary = hi if head.op in ("<", "<=") else lo
        applicable, _ = index.clause_masks(plant.clause)
        nodes = np.flatnonzero(applicable)
        at_boundary = sum(1 for v in nodes if graph.get_attr(int(v), head.attr) == boundary)
        for v in nodes:
            if at_boundary >= BOUNDARY_QUOTA:
                break
            if graph.get_attr(int(v), head.attr) != boundary:
                graph.set_attr(int(v), head.attr, boundary)
                at_boundary += 1


def _assert_clean(graph: ClinicalGraph, clauses: list[Clause]) -> None:
    index = GraphIndex(graph)
    for i, clause in enumerate(clauses):
        _, violated = index.clause_masks(clause)
        if violated.any():
            raise InfeasibleConfig(
                f"clean generation failed: clause {i} ({clause.print_form()}) violated at nodes "
                f"{np.flatnonzero(violated)[:5].tolist()}"
            )


def _inject_violations(
    graph: ClinicalGraph,
    plants: list[_Plant],
    count: int,
    truth: GroundTruth,
    rng: np.random.Generator,
) -> None:
    if count == 0:
        return
    index = GraphIndex(graph)
    pools = []
    for plant in plants:
        applicable, _ = index.clause_masks(plant.clause)
        pools.append(list(np.flatnonzero(applicable)))
    used: set[int] = set()
    made = 0
    stalled = 0
    i = 0
    while made < count:
        if stalled >= len(plants):
            raise InfeasibleConfig(f"cannot place {count} violations; exhausted after {made}")
        plant = plants[i % len(plants)]
        i += 1
        pool = [v for v in pools[plant.index] if int(v) not in used]
        if not pool:
            stalled += 1
            continue
        stalled = 0
        node = int(pool[int(rng.integers(0, len(pool)))])
        head = plant.head
        original = graph.get_attr(node, head.attr)
        if isinstance(head, AttrEqAtom):
            spec = graph.schema.attr(plant.clause.focus_kind, head.attr)
            others = [v for v in spec.values if v != head.value]
            new_value = others[int(rng.integers(0, len(others)))]
        else:
            decl = graph.schema.attr(plant.clause.focus_kind, head.attr)
            lo, hi = _violating_int_range(head, int(decl.min), int(decl.max))
            if lo > hi:
                stalled += 1
                continue
            new_value = int(rng.integers(lo, hi + 1))
        graph.set_attr(node, head.attr, new_value)
        result = crisp_sat(plant.clause, node, graph)
        if result.status != "violated":  # safety net; cannot happen for planted shapes
            graph.set_attr(node, head.attr, original)
            stalled += 1
            continue
        truth.violations[node] = (plant.index, head.attr, original)
        used.add(node)
        made += 1


def _inject_extremes(
    graph: ClinicalGraph,
    clauses: list[Clause],
    sampler: _Sampler,
    count: int,
    truth: GroundTruth,
    rng: np.random.Generator,
) -> None:
    if count == 0:
        return
    targets = []
    for kind in graph.schema.kind_names():
        for attr, spec in graph.schema.kinds[kind].items():
            if spec.type == "numeric" and (kind in sampler.distributions and attr in sampler.distributions[kind]):
                targets.append((kind, attr))
    targets.sort()
    if not targets:
        raise InfeasibleConfig("no numeric attribute available for extreme injection")
    by_kind: dict[str, list[int]] = {}
    for v in graph.node_ids():
        by_kind.setdefault(graph.node_kind(v), []).append(v)
    blocked = set(truth.violations) | truth.extremes
    made = 0
    misses = 0
    i = 0
    while made < count:
        if misses >= 20 * len(targets):
            raise InfeasibleConfig(f"cannot place {count} extremes; exhausted after {made}")
        kind, attr = targets[i % len(targets)]
        i += 1
        pool = [v for v in by_kind.get(kind, ()) if v not in blocked]
        if not pool:
            misses += 1
            continue
        value = sampler.percentile_999_and_beyond(rng, kind, attr)
        if value is None:
            misses += 1
            continue
        node = int(pool[int(rng.integers(0, len(pool)))])
        original = graph.get_attr(node, attr)
        graph.set_attr(node, attr, value)
        if any(crisp_sat(clause, node, graph).status == "violated" for clause in clauses):
            graph.set_attr(node, attr, original)
            misses += 1
            continue
        truth.extremes.add(node)
        blocked.add(node)
        made += 1
        misses = 0


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export_corpus(graph: ClinicalGraph, truth: GroundTruth, out_dir: str | Path, config: CorpusConfig | None = None) -> None:
    """Write records.jsonl, schema.json, labels.jsonl (and the config used)
    in a deterministic byte layout."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    graph.export_records(out / "records.jsonl")
    from .schema import save_schema

    save_schema(graph.schema, out / "schema.json")
    with open(out / "labels.jsonl", "w", encoding="utf-8") as fh:
        for row in truth.labels():
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if config is not None:
        with open(out / "config.json", "w", encoding="utf-8") as fh:
            json.dump(config.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_labels(path: str | Path) -> GroundTruth:
    truth = GroundTruth()
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            doc = json.loads(line)
            if doc["label"] == "violation":
                truth.violations[doc["node"]] = (doc["clause"], doc["field"], None)
            else:
                truth.extremes.add(doc["node"])
    return truth
