"""Typed temporal heterogeneous graph store.

Nodes carry exactly one entity kind plus schema-validated attributes; edges
are timestamped and may be parallel (same endpoints, different timestamps).
Node and edge ids are dense insertion-order integers, which gives every
downstream tie-break a deterministic order.
"""

from __future__ import annotations

import json
from bisect import insort
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    IllegalEdit,
    IllegalRelation,
    MissingNode,
    ParseError,
    SchemaViolation,
    UnknownKind,
)
from .schema import Schema


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    per_kind: dict
    per_relation: dict
    t_min: int | None
    t_max: int | None


@dataclass
class Edge:
    edge_id: int
    src: int
    dst: int
    relation: str
    t: int
    removed: bool = field(default=False, compare=False)


class ClinicalGraph:
    """Mutable graph guarded by a reader-writer convention: query methods are
    pure, scoring pipelines operate on a snapshot (``copy()``), and every
    mutation bumps ``version`` for optimistic-concurrency checks."""

    def __init__(self, schema: Schema):
        self.schema = schema
        self._kinds: list[str] = []
        self._attrs: list[dict] = []
        self._edges: list[Edge] = []
        # per-node adjacency: sorted list of (t, edge_id)
        self._adj: list[list[tuple[int, int]]] = []
        self.version = 0

    # -- construction ---------------------------------------------------------

    def add_node(self, kind: str, attrs: dict) -> int:
        self.schema.validate_node(kind, attrs)
        node_id = len(self._kinds)
        self._kinds.append(kind)
        self._attrs.append(dict(attrs))
        self._adj.append([])
        self.version += 1
        return node_id

    def add_edge(self, src: int, dst: int, relation: str, t: int) -> int:
        for v in (src, dst):
            if not (0 <= v < len(self._kinds)):
                raise MissingNode(f"node {v} does not exist")
        if not isinstance(t, int) or t < 0:
            raise IllegalRelation(f"edge timestamp {t!r} must be a non-negative integer")
        self.schema.check_relation(self._kinds[src], relation, self._kinds[dst])
        edge_id = len(self._edges)
        self._edges.append(Edge(edge_id, src, dst, relation, t))
        insort(self._adj[src], (t, edge_id))
        if dst != src:
            insort(self._adj[dst], (t, edge_id))
        self.version += 1
        return edge_id

    # -- mutation (healer support) ---------------------------------------------

    def set_attr(self, node: int, name: str, value) -> None:
        self._check_node(node)
        kind = self._kinds[node]
        self.schema.attr(kind, name).validate(kind, value)
        self._attrs[node][name] = value
        self.version += 1

    def remove_edge(self, edge_id: int) -> None:
        """Tombstone an edge; ids are never reused and never renumbered."""
        edge = self._edge_checked(edge_id)
        if edge.removed:
            raise IllegalEdit(f"edge {edge_id} already removed")
        edge.removed = True
        for v in {edge.src, edge.dst}:
            self._adj[v].remove((edge.t, edge_id))
        self.version += 1

    def restore_edge(self, edge_id: int) -> None:
        edge = self._edge_checked(edge_id)
        if not edge.removed:
            raise IllegalEdit(f"edge {edge_id} is not removed")
        edge.removed = False
        insort(self._adj[edge.src], (edge.t, edge_id))
        if edge.dst != edge.src:
            insort(self._adj[edge.dst], (edge.t, edge_id))
        self.version += 1

    def shift_timestamp(self, edge_id: int, new_t: int) -> None:
        edge = self._edge_checked(edge_id)
        if not isinstance(new_t, int) or new_t < 0:
            raise IllegalEdit(f"timestamp {new_t!r} must be a non-negative integer")
        if edge.removed:
            raise IllegalEdit(f"edge {edge_id} is removed")
        for v in {edge.src, edge.dst}:
            self._adj[v].remove((edge.t, edge_id))
        edge.t = new_t
        insort(self._adj[edge.src], (new_t, edge_id))
        if edge.dst != edge.src:
            insort(self._adj[edge.dst], (new_t, edge_id))
        self.version += 1

    # -- queries ----------------------------------------------------------------

    @property
    def node_count(self) -> int:
        return len(self._kinds)

    def node_ids(self) -> range:
        return range(len(self._kinds))

    def node_kind(self, node: int) -> str:
        self._check_node(node)
        return self._kinds[node]

    def node_attrs(self, node: int) -> dict:
        self._check_node(node)
        return dict(self._attrs[node])

    def get_attr(self, node: int, name: str, default=None):
        self._check_node(node)
        return self._attrs[node].get(name, default)

    def edge(self, edge_id: int) -> Edge:
        return self._edge_checked(edge_id)

    def edges(self, include_removed: bool = False) -> list[Edge]:
        if include_removed:
            return list(self._edges)
        return [e for e in self._edges if not e.removed]

    def incident_edges(self, node: int) -> list[Edge]:
        """Live edges touching ``node``, ordered by (t, edge_id)."""
        self._check_node(node)
        return [self._edges[eid] for _, eid in self._adj[node]]

    def neighbors(self, node: int) -> list[tuple[int, Edge]]:
        """1-hop neighbors in either edge direction, ordered by (t, edge_id)."""
        out = []
        for edge in self.incident_edges(node):
            other = edge.dst if edge.src == node else edge.src
            out.append((other, edge))
        return out

    def temporal_neighborhood(self, v: int, t_now: int, window: int) -> list[tuple[int, str, int]]:
        """Neighbors of ``v`` reachable through edges in the inclusive window
        ``[t_now - window, t_now]``, plus ``v`` itself as a self-loop.

        Returns (neighbor, relation, delta_t) sorted by (delta_t, neighbor id).
        The self-loop guarantees a non-empty neighborhood for isolated nodes.
        """
        self._check_node(v)
        if window <= 0:
            raise ValueError("window must be positive")
        lo = t_now - window
        entries = [(0, v, "self")]
        for t, eid in self._adj[v]:
            if t < lo:
                continue
            if t > t_now:
                break
            edge = self._edges[eid]
            other = edge.dst if edge.src == v else edge.src
            entries.append((t_now - t, other, edge.relation))
        entries.sort(key=lambda item: (item[0], item[1]))
        return [(node, rel, dt) for dt, node, rel in entries]

    def stats(self) -> GraphStats:
        per_kind: dict[str, int] = {}
        for kind in self._kinds:
            per_kind[kind] = per_kind.get(kind, 0) + 1
        per_relation: dict[str, int] = {}
        t_min = t_max = None
        for edge in self._edges:
            if edge.removed:
                continue
            per_relation[edge.relation] = per_relation.get(edge.relation, 0) + 1
            t_min = edge.t if t_min is None else min(t_min, edge.t)
            t_max = edge.t if t_max is None else max(t_max, edge.t)
        return GraphStats(
            node_count=len(self._kinds),
            edge_count=sum(1 for e in self._edges if not e.removed),
            per_kind=per_kind,
            per_relation=per_relation,
            t_min=t_min,
            t_max=t_max,
        )

    def copy(self) -> "ClinicalGraph":
        """Independent deep copy used as an immutable snapshot by scorers and
        as scratch space by the repair search."""
        clone = ClinicalGraph(self.schema)
        clone._kinds = list(self._kinds)
        clone._attrs = [dict(a) for a in self._attrs]
        clone._edges = [Edge(e.edge_id, e.src, e.dst, e.relation, e.t, e.removed) for e in self._edges]
        clone._adj = [list(a) for a in self._adj]
        clone.version = self.version
        return clone

    # -- ingest / export -----------------------------------------------------

    def ingest(self, path: str | Path) -> GraphStats:
        """Append records from a UTF-8 JSONL file.

        Each line is ``{"op":"node","kind":...,"attrs":{...}}`` or
        ``{"op":"edge","src":<int>,"dst":<int>,"rel":...,"t":<int>}``, where
        src/dst refer to 0-based node insertion order within the file plus any
        nodes already present.
        """
        base = self.node_count
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(line_no, f"invalid JSON: {exc.msg}") from None
                if not isinstance(record, dict) or "op" not in record:
                    raise ParseError(line_no, "record must be an object with an 'op' field")
                op = record["op"]
                try:
                    if op == "node":
                        self.add_node(record["kind"], record.get("attrs", {}))
                    elif op == "edge":
                        self.add_edge(
                            base + int(record["src"]),
                            base + int(record["dst"]),
                            record["rel"],
                            int(record["t"]),
                        )
                    else:
                        raise ParseError(line_no, f"unknown op {op!r}")
                except KeyError as exc:
                    raise ParseError(line_no, f"missing field {exc.args[0]!r}") from None
                except (UnknownKind, IllegalRelation, MissingNode) as exc:
                    raise SchemaViolation(f"line {line_no}: {exc}") from None
                except SchemaViolation:
                    raise
                except Exception as exc:
                    if isinstance(exc, ParseError):
                        raise
                    raise SchemaViolation(f"line {line_no}: {exc}") from None
        return self.stats()

    def export_records(self, path: str | Path) -> None:
        """Write nodes (in id order) then live edges (in id order) as JSONL.

        Re-ingesting the output reproduces an isomorphic graph: node ids map
        by insertion order, edge order is preserved among live edges.
        """
        with open(path, "w", encoding="utf-8") as fh:
            for node in self.node_ids():
                record = {"op": "node", "kind": self._kinds[node], "attrs": self._attrs[node]}
                fh.write(json.dumps(record, sort_keys=True) + "\n")
            for edge in self._edges:
                if edge.removed:
                    continue
                record = {"op": "edge", "src": edge.src, "dst": edge.dst, "rel": edge.relation, "t": edge.t}
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    # -- internals -------------------------------------------------------------

    def _check_node(self, node: int) -> None:
        if not (0 <= node < len(self._kinds)):
            raise MissingNode(f"node {node} does not exist")

    def _edge_checked(self, edge_id: int) -> Edge:
        if not (0 <= edge_id < len(self._edges)):
            raise IllegalEdit(f"edge {edge_id} does not exist")
        return self._edges[edge_id]
