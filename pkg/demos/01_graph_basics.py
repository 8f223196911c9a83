"""Build a tiny clinical graph by hand and run temporal queries.

Run:  python demos/01_graph_basics.py
"""

from medgraph import ClinicalGraph, Schema

schema = Schema.from_json(
    {
        "kinds": {
            "patient": {
                "attrs": {
                    "sex": {"type": "categorical", "values": ["male", "female"]},
                    "age": {"type": "numeric", "min": 0, "max": 100, "integer": True, "unit": "years"},
                }
            },
            "physician": {"attrs": {"specialty": {"type": "categorical", "values": ["obstetrics", "surgery"]}}},
            "diagnosis": {"attrs": {"code": {"type": "categorical", "values": ["pregnancy", "flu"]}}},
        },
        "relations": [
            ["patient", "consultation", "physician"],
            ["diagnosis", "of_patient", "patient"],
        ],
    }
)

graph = ClinicalGraph(schema)
alice = graph.add_node("patient", {"sex": "female", "age": 29})
doctor = graph.add_node("physician", {"specialty": "obstetrics"})
visit_noon = graph.add_edge(alice, doctor, "consultation", t=12 * 3600)
diagnosis = graph.add_node("diagnosis", {"code": "pregnancy"})
graph.add_edge(diagnosis, alice, "of_patient", t=13 * 3600)
graph.add_edge(alice, doctor, "consultation", t=20 * 3600)

print("stats:", graph.stats())

# the temporal neighborhood is an inclusive window looking back from t_now,
# always including the node itself so downstream aggregation is never empty
for hours in (14, 24):
    neighborhood = graph.temporal_neighborhood(alice, t_now=hours * 3600, window=6 * 3600)
    pretty = [(graph.node_kind(u), rel, f"{dt / 3600:.0f}h ago") for u, rel, dt in neighborhood]
    print(f"neighborhood of alice at {hours}:00, 6h window:", pretty)

# schema violations fail loudly
try:
    graph.add_node("patient", {"sex": "sparkle"})
except Exception as exc:
    print("rejected:", exc)
