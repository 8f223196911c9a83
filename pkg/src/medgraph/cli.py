"""Command-line pipeline: synth -> ingest -> train -> induce -> score -> heal
-> eval -> serve.

State lives in a directory: schema.json + records.jsonl (+ params.json,
grammar.txt, grammar_stats.jsonl, history.csv after training).  Exit codes:
0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .errors import MedgraphError
from .graph import ClinicalGraph
from .schema import load_schema, save_schema


def _say(args, *message) -> None:
    if not args.quiet:
        print(*message)


def _load_state(state_dir: str) -> ClinicalGraph:
    state = Path(state_dir)
    schema = load_schema(state / "schema.json")
    graph = ClinicalGraph(schema)
    graph.ingest(state / "records.jsonl")
    return graph


def _load_grammar(path: str, graph: ClinicalGraph, refresh: bool = True):
    from .logic import Grammar

    stats = Path(path).with_suffix(".stats.jsonl")
    grammar = Grammar.load(path, graph.schema, stats_path=stats if stats.exists() else None)
    if refresh or not stats.exists():
        grammar.refresh_stats(graph)
    return grammar


def _parse_threshold(spec: str) -> tuple[str, float]:
    try:
        method, _, value = spec.partition(":")
        if method in ("quantile", "sigma", "abs"):
            return method, float(value)
    except ValueError:
        pass
    raise MedgraphError(f"threshold must be quantile:Q, sigma:M or abs:B, got {spec!r}")


def _threshold_from(reports, spec: str) -> float:
    from .mdl import calibrate_threshold

    method, value = _parse_threshold(spec)
    if method == "abs":
        return value
    return calibrate_threshold([r.score for r in reports], method, value)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    from .synth import CorpusConfig, export_corpus, generate

    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = CorpusConfig.from_json(json.load(fh))
    else:
        config = CorpusConfig()
    if args.seed is not None:
        config.seed = args.seed
    graph, truth = generate(config)
    export_corpus(graph, truth, args.out, config=config)
    stats = graph.stats()
    _say(args, f"wrote corpus to {args.out}: {stats.node_count} nodes, {stats.edge_count} edges, "
               f"{len(truth.violations)} violations, {len(truth.extremes)} extremes")
    return 0


def _cmd_ingest(args) -> int:
    schema = load_schema(args.schema)
    graph = ClinicalGraph(schema)
    stats = graph.ingest(args.records)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_schema(schema, out / "schema.json")
    graph.export_records(out / "records.jsonl")
    with open(out / "meta.json", "w", encoding="utf-8") as fh:
        json.dump({"nodes": stats.node_count, "edges": stats.edge_count}, fh, sort_keys=True)
        fh.write("\n")
    _say(args, f"ingested {stats.node_count} nodes / {stats.edge_count} edges into {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .trainer import TrainConfig, train

    graph = _load_state(args.state)
    config = TrainConfig(seed=args.seed if args.seed is not None else 0)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        fields = {f.name for f in dataclasses.fields(TrainConfig)}
        config = TrainConfig(**{k: v for k, v in doc.items() if k in fields})
        if args.seed is not None:
            config.seed = args.seed
    params, grammar, history = train(graph, config)
    state = Path(args.state)
    params.save(state / "params.json")
    grammar.save(state / "grammar.txt", stats_path=state / "grammar.stats.jsonl")
    history.to_csv(state / "history.csv")
    last = history.rows[-1]
    _say(args, f"trained {len(history)} epochs: recon {last.recon:.3f}, grammar {last.grammar_size} clauses")
    return 0


def _cmd_induce(args) -> int:
    from .induce import TemplateConfig, induce

    graph = _load_state(args.state)
    config = TemplateConfig(min_support=args.min_support, budget=args.budget)
    grammar = induce(graph, config)
    out = Path(args.out)
    grammar.save(out, stats_path=out.with_suffix(".stats.jsonl"))
    _say(args, f"induced {len(grammar)} clauses -> {args.out}")
    return 0


def _cmd_score(args) -> int:
    from .mdl import export_scores_csv, score_all

    graph = _load_state(args.state)
    grammar = _load_grammar(args.grammar, graph)
    raw = score_all(graph, grammar, float("inf"))
    tau = _threshold_from(raw, args.threshold)
    reports = score_all(graph, grammar, tau)
    export_scores_csv(reports, args.out)
    flagged = sum(1 for r in reports if r.flagged)
    _say(args, f"scored {len(reports)} nodes, threshold {tau:.4f} bits, flagged {flagged} -> {args.out}")
    return 0


def _cmd_heal(args) -> int:
    from .healer import RepairConfig, repair_candidates

    graph = _load_state(args.state)
    grammar = _load_grammar(args.grammar, graph)
    candidates = repair_candidates(args.node, grammar, graph, RepairConfig(top_k=args.top_k))
    rows = [
        {
            "rank": c.rank,
            "node": c.node,
            "description": c.description,
            "predicted_score_after": c.predicted_score_after,
            "edit_cost": c.edit_cost,
            "graph_version": c.graph_version,
        }
        for c in candidates
    ]
    payload = json.dumps(rows, indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    return 0


def _cmd_eval(args) -> int:
    from .evaluation import (
        Toggles,
        ablation_run,
        ablation_table,
        detection_metrics,
        export_metrics_csv,
        format_metrics_table,
        run_detection,
    )
    from .synth import load_labels

    graph = _load_state(args.state)
    grammar = _load_grammar(args.grammar, graph) if args.grammar else None
    truth = load_labels(args.labels)
    method, value = _parse_threshold(args.threshold)
    if args.ablation:
        rows = ablation_table(graph, truth)
    else:
        if grammar is None:
            from .induce import induce

            grammar = induce(graph)
        if method == "abs":
            from .mdl import score_all

            reports = score_all(graph, grammar, value)
        else:
            reports, _tau = run_detection(graph, grammar, method, value)
        metrics = detection_metrics(reports, truth)
        from .evaluation import AblationRow, repair_top_k_accuracy

        repair = repair_top_k_accuracy(graph, grammar, truth, reports)
        rows = [AblationRow(name="full", toggles=Toggles(), metrics=metrics, repair_top3=repair)]
    export_metrics_csv(rows, args.out)
    _say(args, format_metrics_table(rows))
    return 0


def _cmd_serve(args) -> int:
    from .service import ReviewService, serve

    graph = _load_state(args.state)
    grammar = _load_grammar(args.grammar, graph)
    method, value = _parse_threshold(args.threshold)
    service = ReviewService(
        graph,
        grammar,
        threshold_method=method,
        threshold_value=value,
        audit_path=args.audit_log,
        auto_apply=args.auto_apply,
    )
    server = serve(service, port=args.port, quiet=args.quiet, static_dir=args.static)
    host, port = server.server_address[:2]
    _say(args, f"review service on http://{host}:{port} "
               f"({service.stats()['flagged']} flagged, threshold {service.stats()['threshold']:.4f})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the run seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    parser = argparse.ArgumentParser(
        prog="medgraph",
        description="Temporal clinical graph integrity: grammar induction, codelength scoring, self-healing.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=lambda **kw: argparse.ArgumentParser(parents=[common], **kw))

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", help="CorpusConfig JSON file (defaults to the standard corpus)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="load a record file into a state directory")
    p.add_argument("--schema", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True, help="state directory")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="joint neural/symbolic training")
    p.add_argument("--state", required=True)
    p.add_argument("--config", help="TrainConfig JSON file")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("induce", help="induce a clause grammar")
    p.add_argument("--state", required=True)
    p.add_argument("--out", required=True, help="grammar file")
    p.add_argument("--min-support", type=int, default=25)
    p.add_argument("--budget", type=int, default=40)
    p.set_defaults(func=_cmd_induce)

    p = sub.add_parser("score", help="score every node and flag anomalies")
    p.add_argument("--state", required=True)
    p.add_argument("--grammar", required=True)
    p.add_argument("--threshold", default="quantile:0.995", help="quantile:Q | sigma:M | abs:B")
    p.add_argument("--out", required=True, help="scores CSV")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("heal", help="propose repairs for one node")
    p.add_argument("--state", required=True)
    p.add_argument("--grammar", required=True)
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=_cmd_heal)

    p = sub.add_parser("eval", help="detection metrics against labels")
    p.add_argument("--state", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--grammar", help="grammar file (induced fresh when omitted)")
    p.add_argument("--threshold", default="sigma:3")
    p.add_argument("--ablation", action="store_true", help="run the ablation table")
    p.add_argument("--out", required=True, help="metrics CSV")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="start the review service")
    p.add_argument("--state", required=True)
    p.add_argument("--grammar", required=True)
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--threshold", default="sigma:3")
    p.add_argument("--audit-log", default="audit.jsonl")
    p.add_argument("--static", help="directory of built UI assets to host alongside the API")
    p.add_argument(
        "--auto-apply", action="store_true",
        help="apply repairs whose predicted score lands under the threshold (default: suggest only)",
    )
    p.set_defaults(func=_cmd_serve)
    return parser


def run_command(argv: list[str]) -> int:
    """Parse and execute; returns the exit code (argparse exits 2 on usage)."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MedgraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
