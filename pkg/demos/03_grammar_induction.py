"""Induce the interaction grammar from data and inspect its codelength
accounting.

Run:  python demos/03_grammar_induction.py
"""

from medgraph import generate, induce, standard_config, total_mdl
from medgraph.induce import compression_gain
from medgraph.synth import STANDARD_CLAUSES

graph, _truth = generate(standard_config(seed=7))
grammar = induce(graph)

planted = set(STANDARD_CLAUSES)
print(f"induced {len(grammar)} clauses:")
for i, clause in enumerate(grammar.clauses):
    marker = "*" if clause.print_form() in planted else " "
    a, s = grammar.n_applicable[i], grammar.n_satisfied[i]
    print(f" {marker} [{i}] conf={grammar.confidence(i):.3f} ({s}/{a})  {clause.print_form()}")
print("(* = matches a planted clause verbatim)")

breakdown = total_mdl(graph, grammar)
print(f"\ntwo-part codelength: {breakdown.grammar_bits:.1f} grammar bits"
      f" + {breakdown.data_bits:.1f} outcome bits = {breakdown.total_bits:.1f} total")
print(f"net compression gain over marginal coding: {compression_gain(graph, grammar):.1f} bits")

costly = max(breakdown.per_clause, key=lambda row: row[2])
print(f"most exception-expensive clause: {costly[0]} ({costly[2]:.1f} data bits)")
