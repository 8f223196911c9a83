"""Human-in-the-loop review service.

A thin HTTP shell over the scoring and healing modules: it owns the review
queue, the allowlist, optimistic concurrency via the graph version counter,
and the audit log.  No scoring or repair logic lives here.

Concurrency: one writer at a time (resolutions and rescores serialize on a
lock); readers see atomically-swapped immutable snapshots.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict, dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

import numpy as np

from .errors import AlreadyResolved, MedgraphError, ServiceNotReady, StaleCandidate, UnknownItem
from .graph import ClinicalGraph
from .healer import NoRepairFound, RepairCandidate, RepairConfig, apply_repair, repair_candidates, violated_clauses
from .logic import Grammar
from .mdl import AnomalyReport, calibrate_threshold, score_all


@dataclass
class Resolution:
    action: str                  # "apply_repair" | "mark_valid" | "reject"
    actor: str
    repair_index: int | None = None
    timestamp: float = 0.0


@dataclass
class ReviewItem:
    item_id: str
    node: int
    score: float
    graph_version: int
    status: str = "open"                         # "open" | "resolved"
    contributions: list = field(default_factory=list)
    resolution: Resolution | None = None
    resolved_score: float | None = None

    def summary(self) -> dict:
        return {
            "id": self.item_id,
            "node": self.node,
            "score": self.score,
            "status": self.status,
            "graph_version": self.graph_version,
            "resolution": asdict(self.resolution) if self.resolution else None,
            "resolved_score": self.resolved_score,
        }


class ReviewService:
    """Queue of flagged records with accept/reject/repair actions."""

    def __init__(
        self,
        graph: ClinicalGraph,
        grammar: Grammar,
        threshold_method: str = "sigma",
        threshold_value: float = 3.0,
        audit_path: str | Path | None = None,
        repair_config: RepairConfig = RepairConfig(),
        auto_apply: bool = False,
    ):
        self.graph = graph
        self.grammar = grammar
        self.threshold_method = threshold_method
        self.threshold_value = threshold_value
        self.repair_config = repair_config
        self.audit_path = Path(audit_path) if audit_path else None
        # repairs are suggestions by default; auto-apply is an explicit
        # opt-in and only fires when the top repair lands under the threshold
        self.auto_apply = auto_apply
        self._lock = threading.RLock()
        self._items: dict[str, ReviewItem] = {}
        self._allowlist: set[int] = set()
        self._reports: list[AnomalyReport] = []
        self._tau: float = 0.0
        self._repair_cache: dict[tuple[int, int], list[RepairCandidate]] = {}
        self._ready = False
        self.rescore()
        if self.auto_apply:
            self.run_auto_apply()

    # -- scoring / queue -----------------------------------------------------

    def rescore(self) -> dict:
        """Recompute all scores, refresh the open queue, keep resolved items."""
        with self._lock:
            raw = score_all(self.graph, self.grammar, float("inf"))
            scores = [r.score for r in raw]
            self._tau = calibrate_threshold(scores, self.threshold_method, self.threshold_value)
            self._reports = score_all(self.graph, self.grammar, self._tau, allowlist=self._allowlist)
            flagged = {r.node: r for r in self._reports if r.flagged}
            for item_id in [i for i, item in self._items.items() if item.status == "open"]:
                item = self._items[item_id]
                if item.node not in flagged:
                    del self._items[item_id]
                else:
                    report = flagged[item.node]
                    item.score = report.score
                    item.graph_version = self.graph.version
                    item.contributions = self._contribution_rows(report)
            known = {item.node for item in self._items.values()}
            for node, report in sorted(flagged.items()):
                if node in known:
                    continue
                item_id = f"n{node}"
                self._items[item_id] = ReviewItem(
                    item_id=item_id,
                    node=node,
                    score=report.score,
                    graph_version=self.graph.version,
                    contributions=self._contribution_rows(report),
                )
            self._repair_cache.clear()
            self._ready = True
            return self.stats()

    def run_auto_apply(self) -> int:
        """Resolve every open item whose best repair drops it under the
        threshold; each application is audit-logged under the 'auto' actor.
        Returns the number of repairs applied."""
        applied = 0
        with self._lock:
            while True:
                target = None
                for item in sorted(self._items.values(), key=lambda i: (-i.score, i.node)):
                    if item.status != "open":
                        continue
                    repairs = self._repairs_for(item)
                    if repairs and repairs[0].predicted_score_after <= self._tau:
                        target = item
                        break
                if target is None:
                    return applied
                self.resolve(target.item_id, Resolution(action="apply_repair", actor="auto", repair_index=0))
                applied += 1

    def _contribution_rows(self, report: AnomalyReport) -> list[dict]:
        rows = []
        for c in report.contributions:
            rows.append(
                {
                    "clause": c.clause_index,
                    "text": self.grammar.clauses[c.clause_index].print_form(),
                    "bits": c.bits,
                    "outcome": c.outcome,
                }
            )
        return rows

    def _require_ready(self) -> None:
        if not self._ready:
            raise ServiceNotReady("service has not scored the graph yet")

    def list_anomalies(
        self,
        min_score: float | None = None,
        status: str | None = None,
        page: int = 1,
        page_size: int = 20,
    ) -> dict:
        """Filtered queue sorted by score descending; stable pagination."""
        self._require_ready()
        with self._lock:
            items = sorted(self._items.values(), key=lambda i: (-i.score, i.node))
            if min_score is not None:
                items = [i for i in items if i.score >= min_score]
            if status is not None:
                items = [i for i in items if i.status == status]
            total = len(items)
            start = (page - 1) * page_size
            chunk = items[start : start + page_size]
            return {
                "items": [i.summary() for i in chunk],
                "page": page,
                "page_size": page_size,
                "total": total,
                "graph_version": self.graph.version,
                "threshold": self._tau,
            }

    def item_detail(self, item_id: str) -> dict:
        self._require_ready()
        with self._lock:
            item = self._items.get(item_id)
            if item is None:
                raise UnknownItem(f"no review item {item_id!r}")
            detail = item.summary()
            detail["contributions"] = item.contributions
            detail["violated_clauses"] = [
                {"text": clause.print_form(), "bits": bits, "witness": witness["bindings"]}
                for clause, bits, witness in violated_clauses(item.node, self.grammar, self.graph)
            ]
            detail["repairs"] = [self._repair_row(c) for c in self._repairs_for(item)]
            detail["neighborhood"] = self._neighborhood(item.node)
            detail["node_kind"] = self.graph.node_kind(item.node)
            detail["node_attrs"] = self.graph.node_attrs(item.node)
            detail["graph_version"] = self.graph.version
            return detail

    def _repairs_for(self, item: ReviewItem) -> list[RepairCandidate]:
        if item.status != "open":
            return []
        key = (item.node, self.graph.version)
        if key not in self._repair_cache:
            try:
                self._repair_cache[key] = repair_candidates(item.node, self.grammar, self.graph, self.repair_config)
            except NoRepairFound:
                self._repair_cache[key] = []
        return self._repair_cache[key]

    def _repair_row(self, candidate: RepairCandidate) -> dict:
        return {
            "rank": candidate.rank,
            "description": candidate.description,
            "predicted_score_after": candidate.predicted_score_after,
            "edit_cost": candidate.edit_cost,
            "graph_version": candidate.graph_version,
        }

    def _neighborhood(self, node: int) -> list[dict]:
        rows = []
        for other, edge in self.graph.neighbors(node):
            rows.append(
                {
                    "node": other,
                    "kind": self.graph.node_kind(other),
                    "relation": edge.relation,
                    "t": edge.t,
                    "attrs": self.graph.node_attrs(other),
                }
            )
        return rows

    # -- resolutions -----------------------------------------------------------

    def resolve(self, item_id: str, resolution: Resolution) -> dict:
        """Apply a reviewer decision; exactly one audit line per call."""
        self._require_ready()
        with self._lock:
            item = self._items.get(item_id)
            if item is None:
                raise UnknownItem(f"no review item {item_id!r}")
            if item.status == "resolved":
                raise AlreadyResolved(f"item {item_id} already resolved")
            resolution.timestamp = resolution.timestamp or time.time()
            version_before = self.graph.version
            new_report = None
            if resolution.action == "apply_repair":
                if item.graph_version != self.graph.version:
                    raise StaleCandidate(
                        f"item proposed at graph version {item.graph_version}, current is {self.graph.version}; rescore first"
                    )
                repairs = self._repairs_for(item)
                if resolution.repair_index is None or not (0 <= resolution.repair_index < len(repairs)):
                    raise MedgraphError(f"repair index {resolution.repair_index!r} out of range")
                candidate = repairs[resolution.repair_index]
                _, new_report = apply_repair(self.graph, candidate, self.grammar)
                item.resolved_score = new_report.score
            elif resolution.action == "mark_valid":
                self._allowlist.add(item.node)
                item.resolved_score = item.score
            elif resolution.action == "reject":
                item.resolved_score = item.score
            else:
                raise MedgraphError(f"unknown action {resolution.action!r}")
            item.status = "resolved"
            item.resolution = resolution
            self._audit(item, resolution, version_before)
            if resolution.action == "apply_repair":
                self.rescore()
            out = {"item": item.summary(), "graph_version": self.graph.version}
            if new_report is not None:
                out["new_score"] = new_report.score
                out["below_threshold"] = new_report.score <= self._tau
            return out

    def _audit(self, item: ReviewItem, resolution: Resolution, version_before: int) -> None:
        if self.audit_path is None:
            return
        line = {
            "ts": resolution.timestamp,
            "item": item.item_id,
            "node": item.node,
            "action": resolution.action,
            "actor": resolution.actor,
            "repair_index": resolution.repair_index,
            "graph_version_before": version_before,
            "graph_version_after": self.graph.version,
        }
        with open(self.audit_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(line, sort_keys=True) + "\n")

    # -- misc ---------------------------------------------------------------------

    def stats(self) -> dict:
        self._require_ready()
        with self._lock:
            scores = np.array([r.score for r in self._reports]) if self._reports else np.zeros(1)
            graph_stats = self.graph.stats()
            return {
                "graph_version": self.graph.version,
                "nodes": graph_stats.node_count,
                "edges": graph_stats.edge_count,
                "per_kind": graph_stats.per_kind,
                "grammar_size": len(self.grammar),
                "threshold": self._tau,
                "flagged": sum(1 for r in self._reports if r.flagged),
                "open_items": sum(1 for i in self._items.values() if i.status == "open"),
                "score_quantiles": {
                    "p50": float(np.quantile(scores, 0.5)),
                    "p90": float(np.quantile(scores, 0.9)),
                    "p99": float(np.quantile(scores, 0.99)),
                    "max": float(scores.max()),
                },
            }

    def grammar_view(self) -> dict:
        return {
            "graph_version": self.graph.version,
            "clauses": [
                {
                    "index": i,
                    "text": clause.print_form(),
                    "applicable": self.grammar.n_applicable[i],
                    "satisfied": self.grammar.n_satisfied[i],
                    "confidence": self.grammar.confidence(i),
                }
                for i, clause in enumerate(self.grammar.clauses)
            ],
        }


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    service: ReviewService = None  # set by serve()
    static_dir: Path | None = None
    quiet: bool = True

    def log_message(self, fmt, *args):
        if not self.quiet:
            super().log_message(fmt, *args)

    def _serve_static(self, url_path: str) -> bool:
        if self.static_dir is None:
            return False
        relative = url_path.lstrip("/") or "index.html"
        target = (self.static_dir / relative).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            return False
        content_types = {
            ".html": "text/html", ".js": "text/javascript", ".css": "text/css",
            ".json": "application/json", ".svg": "image/svg+xml",
        }
        body = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_types.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
        return True

    def _send(self, code: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code: int, message: str) -> None:
        self._send(code, {"error": message, "graph_version": self.service.graph.version})

    def do_GET(self):  # noqa: N802  (stdlib naming)
        try:
            url = urlparse(self.path)
            query = {k: v[0] for k, v in parse_qs(url.query).items()}
            parts = [p for p in url.path.split("/") if p]
            if (not parts or parts[0] != "api") and self._serve_static(url.path):
                return
            if parts == ["api", "anomalies"]:
                self._send(
                    200,
                    self.service.list_anomalies(
                        min_score=float(query["min_score"]) if "min_score" in query else None,
                        status=query.get("status"),
                        page=int(query.get("page", 1)),
                        page_size=int(query.get("page_size", 20)),
                    ),
                )
            elif len(parts) == 3 and parts[:2] == ["api", "anomalies"]:
                self._send(200, self.service.item_detail(parts[2]))
            elif parts == ["api", "stats"]:
                self._send(200, self.service.stats())
            elif parts == ["api", "grammar"]:
                self._send(200, self.service.grammar_view())
            else:
                self._error(404, f"no route {url.path}")
        except UnknownItem as exc:
            self._error(404, str(exc))
        except ServiceNotReady as exc:
            self._error(503, str(exc))
        except MedgraphError as exc:
            self._error(400, str(exc))
        except Exception as exc:  # pragma: no cover - last resort
            self._error(500, f"{type(exc).__name__}: {exc}")

    def do_POST(self):  # noqa: N802
        try:
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length).decode("utf-8")) if length else {}
            if parts == ["api", "rescore"]:
                self._send(200, self.service.rescore())
            elif len(parts) == 4 and parts[:2] == ["api", "anomalies"] and parts[3] == "resolution":
                resolution = Resolution(
                    action=body.get("action", ""),
                    actor=body.get("actor", "anonymous"),
                    repair_index=body.get("repair_index"),
                )
                self._send(200, self.service.resolve(parts[2], resolution))
            else:
                self._error(404, f"no route {url.path}")
        except UnknownItem as exc:
            self._error(404, str(exc))
        except (AlreadyResolved, StaleCandidate) as exc:
            self._error(409, str(exc))
        except ServiceNotReady as exc:
            self._error(503, str(exc))
        except MedgraphError as exc:
            self._error(400, str(exc))
        except json.JSONDecodeError as exc:
            self._error(400, f"invalid JSON body: {exc}")
        except Exception as exc:  # pragma: no cover
            self._error(500, f"{type(exc).__name__}: {exc}")


def serve(
    service: ReviewService,
    port: int = 8765,
    quiet: bool = True,
    static_dir: str | Path | None = None,
) -> ThreadingHTTPServer:
    """Start the HTTP server (returns it; caller owns serve_forever/shutdown).
    Port 0 binds an ephemeral port, available as server.server_address[1].
    ``static_dir`` optionally hosts the built review UI next to the API."""
    handler = type(
        "BoundHandler",
        (_Handler,),
        {"service": service, "quiet": quiet, "static_dir": Path(static_dir) if static_dir else None},
    )
    return ThreadingHTTPServer(("127.0.0.1", port), handler)
