"""Generate the evaluation corpus: planted grammar, labeled corruptions,
rare-but-valid extremes.

Run:  python demos/02_synthetic_corpus.py
"""

from collections import Counter

from medgraph import generate, standard_config
from medgraph.logic import crisp_sat, parse_clause

config = standard_config(n_events=1500, n_patients=300, n_physicians=25, seed=7)
graph, truth = generate(config)

stats = graph.stats()
print(f"{stats.node_count} nodes / {stats.edge_count} edges")
print("per kind:", stats.per_kind)
print(f"{len(truth.violations)} planted violations, {len(truth.extremes)} extremes")

# the labels name the corrupted field; an independent evaluator can verify
clauses = [parse_clause(text, graph.schema) for text in config.planted_clauses]
by_field = Counter(field for _idx, field, _orig in truth.violations.values())
print("corrupted fields:", dict(by_field))

node, (clause_idx, field, original) = next(iter(sorted(truth.violations.items())))
clause = clauses[clause_idx]
print("\nexample violation at node", node, f"({graph.node_kind(node)})")
print("  clause:  ", clause.print_form())
print("  field:   ", field, "=", graph.get_attr(node, field), "(was", original, ")")
print("  verdict: ", crisp_sat(clause, node, graph).status)

# extremes are numerically wild yet satisfy every planted clause
extreme = sorted(truth.extremes)[0]
print("\nexample extreme at node", extreme, f"({graph.node_kind(extreme)})")
print("  attrs:", graph.node_attrs(extreme))
print("  violates any clause:", any(crisp_sat(c, extreme, graph).status == "violated" for c in clauses))
