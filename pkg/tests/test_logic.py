import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medgraph.errors import ClauseSyntaxError, MissingNode, UncoveredAttribute, UnknownSymbol
from medgraph.graph import ClinicalGraph
from medgraph.logic import (
    GraphIndex,
    Grammar,
    consistency_score,
    crisp_sat,
    parse_clause,
    soft_eval,
    soft_sat,
    violation_mass,
)

PREGNANCY = "diagnosis_attr(x, code, pregnancy) -> attr_eq(x, sex, female)"
PEDIATRIC = "attr_eq(x, ward, pediatric) -> cmp(x, age, <, 18)"


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def test_parse_pregnancy_clause(tiny_schema):
    clause = parse_clause(PREGNANCY, tiny_schema)
    assert len(clause.body) == 1
    assert clause.focus_kind == "patient"
    assert clause.print_form() == PREGNANCY


def test_parse_comparison_clause(tiny_schema):
    clause = parse_clause(PEDIATRIC, tiny_schema)
    assert clause.head.op == "<" and clause.head.constant == 18
    assert clause.print_form() == PEDIATRIC


def test_parse_rejects_empty_body(tiny_schema):
    with pytest.raises(ClauseSyntaxError):
        parse_clause("-> attr_eq(x, sex, female)", tiny_schema)


def test_parse_error_carries_position(tiny_schema):
    with pytest.raises(ClauseSyntaxError) as err:
        parse_clause("attr_eq(x, sex female) -> attr_eq(x, sex, male)", tiny_schema)
    assert err.value.position > 0


def test_parse_unknown_symbols(tiny_schema):
    with pytest.raises(UnknownSymbol):
        parse_clause("attr_eq(x, sex, purple) -> attr_eq(x, ward, general)", tiny_schema)
    with pytest.raises(UnknownSymbol):
        parse_clause("starship_attr(x, code, flu) -> attr_eq(x, sex, male)", tiny_schema)
    with pytest.raises(UnknownSymbol):
        parse_clause("attr_eq(x, warp, pediatric) -> attr_eq(x, sex, male)", tiny_schema)


def test_parse_rejects_three_atom_bodies(tiny_schema):
    text = "patient(x), attr_eq(x, ward, general), attr_eq(x, sex, male) -> cmp(x, age, <, 50)"
    with pytest.raises(ClauseSyntaxError):
        parse_clause(text, tiny_schema)


def test_parse_pretty_print_round_trip(tiny_schema):
    texts = [
        PREGNANCY,
        PEDIATRIC,
        "patient(x), diagnosis_attr(x, code, measles) -> cmp(x, age, <, 18)",
        "attr_eq(x, ward, general) -> attr_eq(x, sex, female)",
        "rel(x, y, consultation) -> attr_eq(x, ward, general)",
    ]
    for text in texts:
        clause = parse_clause(text, tiny_schema)
        assert clause.print_form() == text
        assert parse_clause(clause.print_form(), tiny_schema) == clause


# ---------------------------------------------------------------------------
# crisp satisfaction
# ---------------------------------------------------------------------------

def test_crisp_male_pregnancy_violated(tiny_graph):
    clause = parse_clause(PREGNANCY, tiny_graph.schema)
    result = crisp_sat(clause, 0, tiny_graph)
    assert result.status == "violated"
    assert result.witness["x"] == 0
    assert result.witness_edges  # the diagnosis edge grounds the body


def test_crisp_satisfied_and_not_applicable(tiny_graph):
    clause = parse_clause(PREGNANCY, tiny_graph.schema)
    assert crisp_sat(clause, 1, tiny_graph).status == "satisfied"
    # the physician has no sex attribute: clause cannot apply there
    assert crisp_sat(clause, 2, tiny_graph).status == "not_applicable"


def test_crisp_pediatric_violation(tiny_schema):
    graph = ClinicalGraph(tiny_schema)
    v = graph.add_node("patient", {"ward": "pediatric", "age": 45})
    clause = parse_clause(PEDIATRIC, tiny_schema)
    assert crisp_sat(clause, v, graph).status == "violated"
    u = graph.add_node("patient", {"ward": "general", "age": 45})
    assert crisp_sat(clause, u, graph).status == "not_applicable"


def test_crisp_missing_node(tiny_graph):
    clause = parse_clause(PREGNANCY, tiny_graph.schema)
    with pytest.raises(MissingNode):
        crisp_sat(clause, 10_000, tiny_graph)


def test_crisp_rel_atom(tiny_graph):
    clause = parse_clause("rel(x, y, consultation) -> attr_eq(x, ward, general)", tiny_graph.schema)
    assert crisp_sat(clause, 0, tiny_graph).status == "satisfied"
    tiny_graph.set_attr(0, "ward", "pediatric")
    result = crisp_sat(clause, 0, tiny_graph)
    assert result.status == "violated"
    assert result.witness["y"] == 2


# ---------------------------------------------------------------------------
# soft satisfaction
# ---------------------------------------------------------------------------

def test_soft_point_mass_crisp_limit(tiny_graph):
    clause = parse_clause(PREGNANCY, tiny_graph.schema)
    assert soft_sat(clause, 1, tiny_graph) == 1.0
    assert soft_sat(clause, 0, tiny_graph) == 0.0


def test_soft_half_sex_mass(tiny_graph):
    clause = parse_clause(PREGNANCY, tiny_graph.schema)
    relaxed = {"sex": {"male": 0.5, "female": 0.5}}
    assert soft_sat(clause, 0, tiny_graph, relaxed) == pytest.approx(0.5)


def test_soft_cmp_boundary_half(tiny_schema):
    graph = ClinicalGraph(tiny_schema)
    v = graph.add_node("patient", {"ward": "pediatric", "age": 18})
    clause = parse_clause(PEDIATRIC, tiny_schema)
    assert soft_sat(clause, v, graph, temperature=1.0) == pytest.approx(0.5)


def test_soft_uncovered_attribute(tiny_schema):
    graph = ClinicalGraph(tiny_schema)
    v = graph.add_node("patient", {"ward": "pediatric"})  # age unset
    clause = parse_clause(PEDIATRIC, tiny_schema)
    with pytest.raises(UncoveredAttribute):
        soft_sat(clause, v, graph)


def test_soft_agrees_with_crisp_on_corpus(small_corpus):
    """Point-mass relaxation at vanishing temperature reproduces crisp
    satisfaction for every (clause, node) pair of the test corpus."""
    from medgraph.synth import STANDARD_CLAUSES

    (graph, _truth), _config = small_corpus
    clauses = [parse_clause(t, graph.schema) for t in STANDARD_CLAUSES]
    rng = np.random.default_rng(0)
    nodes = rng.choice(graph.node_count, size=400, replace=False)
    for clause in clauses:
        for v in nodes:
            crisp = crisp_sat(clause, int(v), graph).status
            soft = soft_sat(clause, int(v), graph, temperature=1e-6)
            expected = 0.0 if crisp == "violated" else 1.0
            assert soft == pytest.approx(expected, abs=1e-9), (clause.print_form(), int(v), crisp)


# ---------------------------------------------------------------------------
# consistency score
# ---------------------------------------------------------------------------

def _tiny_grammar(schema):
    return Grammar(clauses=[parse_clause(PREGNANCY, schema), parse_clause(PEDIATRIC, schema)])


def test_consistency_zero_when_satisfied(tiny_graph):
    grammar = _tiny_grammar(tiny_graph.schema)
    assert consistency_score(1, grammar, tiny_graph) == 0.0


def test_consistency_minus_one_per_violation(tiny_graph):
    grammar = _tiny_grammar(tiny_graph.schema)
    assert consistency_score(0, grammar, tiny_graph) == -1.0
    assert violation_mass(0, grammar, tiny_graph) == 1.0


def test_consistency_matches_from_definition(small_corpus):
    from medgraph.synth import STANDARD_CLAUSES

    (graph, _truth), _config = small_corpus
    grammar = Grammar(clauses=[parse_clause(t, graph.schema) for t in STANDARD_CLAUSES])
    rng = np.random.default_rng(1)
    for v in rng.choice(graph.node_count, size=100, replace=False):
        expected = -sum(
            1.0 for clause in grammar.clauses if crisp_sat(clause, int(v), graph).status == "violated"
        )
        assert consistency_score(int(v), grammar, graph) == expected


def test_consistency_monotone_under_corruption(tiny_schema):
    graph = ClinicalGraph(tiny_schema)
    v = graph.add_node("patient", {"ward": "general", "age": 45, "sex": "male"})
    grammar = _tiny_grammar(tiny_schema)
    before = consistency_score(v, grammar, graph)
    graph.set_attr(v, "ward", "pediatric")  # now violates the pediatric clause
    after = consistency_score(v, grammar, graph)
    assert after < before


# ---------------------------------------------------------------------------
# vectorized evaluation agrees with the per-node reference
# ---------------------------------------------------------------------------

def test_graph_index_masks_match_crisp_sat(small_corpus):
    from medgraph.synth import STANDARD_CLAUSES

    (graph, _truth), _config = small_corpus
    index = GraphIndex(graph)
    for text in STANDARD_CLAUSES:
        clause = parse_clause(text, graph.schema)
        applicable, violated = index.clause_masks(clause)
        for v in range(0, graph.node_count, 7):
            status = crisp_sat(clause, v, graph).status
            assert applicable[v] == (status != "not_applicable")
            assert violated[v] == (status == "violated")


def test_soft_eval_gradient_matches_finite_differences(tiny_graph):
    clause = parse_clause(PREGNANCY, tiny_graph.schema)
    relaxation = {"sex": {"male": 0.7, "female": 0.3}}
    result = soft_eval(clause, 0, tiny_graph, relaxation, temperature=1.0)
    eps = 1e-6
    for value in ("male", "female"):
        bumped = {"sex": dict(relaxation["sex"])}
        bumped["sex"][value] += eps
        hi = soft_eval(clause, 0, tiny_graph, bumped, temperature=1.0).value
        bumped["sex"][value] -= 2 * eps
        lo = soft_eval(clause, 0, tiny_graph, bumped, temperature=1.0).value
        fd = (hi - lo) / (2 * eps)
        assert result.coord_grad.get(("cat", "sex", value), 0.0) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_grammar_stats_refresh(small_corpus):
    from medgraph.synth import STANDARD_CLAUSES

    (graph, truth), _config = small_corpus
    grammar = Grammar(clauses=[parse_clause(t, graph.schema) for t in STANDARD_CLAUSES])
    grammar.refresh_stats(graph)
    assert all(0 < grammar.confidence(i) < 1 for i in range(len(grammar)))
    assert all(s <= a for a, s in zip(grammar.n_applicable, grammar.n_satisfied))
    total_violations = sum(a - s for a, s in zip(grammar.n_applicable, grammar.n_satisfied))
    assert total_violations >= len(truth.violations)


def test_grammar_file_round_trip(tmp_path, tiny_schema):
    grammar = _tiny_grammar(tiny_schema)
    grammar.n_applicable = [10, 5]
    grammar.n_satisfied = [9, 5]
    path = tmp_path / "grammar.txt"
    stats = tmp_path / "grammar.stats.jsonl"
    grammar.save(path, stats_path=stats)
    loaded = Grammar.load(path, tiny_schema, stats_path=stats)
    assert [c.print_form() for c in loaded.clauses] == [c.print_form() for c in grammar.clauses]
    assert loaded.n_applicable == grammar.n_applicable
    assert loaded.n_satisfied == grammar.n_satisfied
