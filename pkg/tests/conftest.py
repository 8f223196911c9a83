import pytest

from medgraph.graph import ClinicalGraph
from medgraph.induce import induce
from medgraph.schema import Schema
from medgraph.synth import generate, standard_config


@pytest.fixture
def tiny_schema() -> Schema:
    """Minimal clinical schema used by unit tests."""
    return Schema.from_json(
        {
            "kinds": {
                "patient": {
                    "attrs": {
                        "sex": {"type": "categorical", "values": ["male", "female"]},
                        "age": {"type": "numeric", "min": 0, "max": 100, "integer": True, "unit": "years"},
                        "ward": {"type": "categorical", "values": ["pediatric", "general"]},
                    }
                },
                "physician": {
                    "attrs": {"specialty": {"type": "categorical", "values": ["obstetrics", "surgery"]}}
                },
                "diagnosis": {
                    "attrs": {
                        "code": {"type": "categorical", "values": ["pregnancy", "flu", "measles", "fracture"]}
                    }
                },
            },
            "relations": [
                ["diagnosis", "of_patient", "patient"],
                ["patient", "consultation", "physician"],
                ["patient", "related_to", "patient"],
            ],
        }
    )


@pytest.fixture
def tiny_graph(tiny_schema) -> ClinicalGraph:
    """Two patients (one violating the pregnancy rule), one physician."""
    graph = ClinicalGraph(tiny_schema)
    male = graph.add_node("patient", {"sex": "male", "age": 45, "ward": "general"})
    female = graph.add_node("patient", {"sex": "female", "age": 30, "ward": "general"})
    doc = graph.add_node("physician", {"specialty": "obstetrics"})
    d1 = graph.add_node("diagnosis", {"code": "pregnancy"})
    d2 = graph.add_node("diagnosis", {"code": "pregnancy"})
    graph.add_edge(d1, male, "of_patient", 100)
    graph.add_edge(d2, female, "of_patient", 110)
    graph.add_edge(male, doc, "consultation", 90)
    graph.add_edge(female, doc, "consultation", 95)
    return graph


@pytest.fixture(scope="session")
def small_corpus():
    """1000-event corpus shared by unit tests (violations and extremes)."""
    config = standard_config(n_events=1000, n_patients=200, n_physicians=20)
    return generate(config), config


@pytest.fixture(scope="session")
def standard_corpus():
    """The acceptance corpus: 5000 events, 10 clauses, 2% violations,
    2% extremes, seed 42."""
    config = standard_config()
    return generate(config), config


@pytest.fixture(scope="session")
def standard_grammar(standard_corpus):
    (graph, _truth), _config = standard_corpus
    return induce(graph)
