"""Propose and apply minimal repairs for flagged records.

Run:  python demos/05_self_healing.py
"""

from medgraph import anomaly_score, generate, induce, standard_config
from medgraph.healer import apply_repair, repair_candidates, violated_clauses

graph, truth = generate(standard_config(n_events=1500, n_patients=300, n_physicians=25, seed=7))
grammar = induce(graph)

# pick a labeled corruption that the induced grammar catches
node = next(
    v for v in sorted(truth.violations)
    if violated_clauses(v, grammar, graph)
)
clause_idx, field, original = truth.violations[node]
print(f"node {node} ({graph.node_kind(node)}), corrupted field {field!r} "
      f"(now {graph.get_attr(node, field)!r}, originally {original!r})")
print(f"score before healing: {anomaly_score(node, graph, grammar):.3f} bits")
for clause, bits, witness in violated_clauses(node, grammar, graph):
    print(f"  violates [{bits:.2f} bits]: {clause.print_form()}")

candidates = repair_candidates(node, grammar, graph)
print("\nrepair candidates (verified by re-scoring a patched copy):")
for c in candidates:
    print(f"  #{c.rank} score_after={c.predicted_score_after:.3f} cost={c.edit_cost:.2f}  {c.description}")

chosen = candidates[0]
applied, report = apply_repair(graph, chosen, grammar)
print(f"\napplied '{chosen.description}': score is now {report.score:.3f} bits"
      f" (predicted {chosen.predicted_score_after:.3f}, exact match: {report.score == chosen.predicted_score_after})")
print("remaining violations:", len(violated_clauses(node, grammar, graph)))
