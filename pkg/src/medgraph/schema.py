"""Declarative graph schema: entity kinds, typed attributes, legal relations.

The schema is an explicit file, never inferred from data: the logic engine
needs closed attribute vocabularies to enumerate predicates, and the encoder
needs declared numeric ranges to normalize features.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IllegalAttribute, IllegalRelation, SchemaViolation, UnknownKind

ATTR_TYPES = ("categorical", "numeric", "timestamp", "boolean")


@dataclass(frozen=True)
class AttrSpec:
    """Declaration of one attribute on one entity kind."""

    name: str
    type: str  # one of ATTR_TYPES
    values: tuple[str, ...] = ()       # categorical vocabulary
    min: float | None = None           # numeric range
    max: float | None = None
    unit: str = ""
    integer: bool = False              # numeric values restricted to integers

    def __post_init__(self):
        if self.type not in ATTR_TYPES:
            raise SchemaViolation(f"attribute {self.name!r}: unknown type {self.type!r}")
        if self.type == "categorical" and not self.values:
            raise SchemaViolation(f"categorical attribute {self.name!r} declares no vocabulary")
        if self.type == "numeric" and (self.min is None or self.max is None or self.min >= self.max):
            raise SchemaViolation(f"numeric attribute {self.name!r} needs min < max")

    def vocab_size(self) -> int:
        """Size of the value alphabet used for codelength accounting."""
        if self.type == "categorical":
            return len(self.values)
        if self.type == "boolean":
            return 2
        # numeric/timestamp constants are coded with a fixed-width code instead
        raise SchemaViolation(f"attribute {self.name!r} has no finite vocabulary")

    def validate(self, kind: str, value) -> None:
        if self.type == "categorical":
            if not isinstance(value, str) or value not in self.values:
                raise IllegalAttribute(kind, self.name, f"value {value!r} not in vocabulary")
        elif self.type == "numeric":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise IllegalAttribute(kind, self.name, f"value {value!r} is not numeric")
            if not math.isfinite(value):
                raise IllegalAttribute(kind, self.name, "value is not finite")
            if not (self.min <= value <= self.max):
                raise IllegalAttribute(kind, self.name, f"value {value!r} outside [{self.min}, {self.max}]")
            if self.integer and value != int(value):
                raise IllegalAttribute(kind, self.name, f"value {value!r} is not an integer")
        elif self.type == "timestamp":
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise IllegalAttribute(kind, self.name, f"value {value!r} is not a non-negative integer")
        elif self.type == "boolean":
            if not isinstance(value, bool):
                raise IllegalAttribute(kind, self.name, f"value {value!r} is not a boolean")


@dataclass
class Schema:
    """Kinds with their attribute declarations, plus legal relation triples."""

    kinds: dict[str, dict[str, AttrSpec]] = field(default_factory=dict)
    relations: list[tuple[str, str, str]] = field(default_factory=list)  # (src_kind, relation, dst_kind)

    def __post_init__(self):
        self._relation_set = set(self.relations)

    # -- lookups ------------------------------------------------------------

    def kind_names(self) -> list[str]:
        return list(self.kinds.keys())

    def has_kind(self, kind: str) -> bool:
        return kind in self.kinds

    def attr(self, kind: str, name: str) -> AttrSpec:
        if kind not in self.kinds:
            raise UnknownKind(f"unknown kind {kind!r}")
        try:
            return self.kinds[kind][name]
        except KeyError:
            raise IllegalAttribute(kind, name, "not declared") from None

    def attr_names(self) -> list[str]:
        """Distinct attribute names across all kinds, in declaration order."""
        seen: dict[str, None] = {}
        for attrs in self.kinds.values():
            for name in attrs:
                seen.setdefault(name)
        return list(seen)

    def kinds_declaring(self, attr_name: str) -> list[str]:
        return [k for k, attrs in self.kinds.items() if attr_name in attrs]

    def relation_names(self) -> list[str]:
        seen: dict[str, None] = {}
        for _, rel, _ in self.relations:
            seen.setdefault(rel)
        return list(seen)

    def relation_legal(self, src_kind: str, relation: str, dst_kind: str) -> bool:
        return (src_kind, relation, dst_kind) in self._relation_set

    # -- validation ---------------------------------------------------------

    def validate_node(self, kind: str, attrs: dict) -> None:
        if kind not in self.kinds:
            raise UnknownKind(f"unknown kind {kind!r}")
        declared = self.kinds[kind]
        for name, value in attrs.items():
            if name not in declared:
                raise IllegalAttribute(kind, name, "not declared")
            declared[name].validate(kind, value)

    def check_relation(self, src_kind: str, relation: str, dst_kind: str) -> None:
        if not self.relation_legal(src_kind, relation, dst_kind):
            raise IllegalRelation(
                f"relation {relation!r} not declared for ({src_kind!r} -> {dst_kind!r})"
            )

    # -- (de)serialization ----------------------------------------------------

    def to_json(self) -> dict:
        kinds = {}
        for kind, attrs in self.kinds.items():
            out = {}
            for name, spec in attrs.items():
                entry: dict = {"type": spec.type}
                if spec.type == "categorical":
                    entry["values"] = list(spec.values)
                elif spec.type == "numeric":
                    entry.update(min=spec.min, max=spec.max, unit=spec.unit, integer=spec.integer)
                out[name] = entry
            kinds[kind] = {"attrs": out}
        return {"version": 1, "kinds": kinds, "relations": [list(t) for t in self.relations]}

    @classmethod
    def from_json(cls, doc: dict) -> "Schema":
        kinds: dict[str, dict[str, AttrSpec]] = {}
        for kind, body in doc.get("kinds", {}).items():
            attrs = {}
            for name, entry in body.get("attrs", {}).items():
                attrs[name] = AttrSpec(
                    name=name,
                    type=entry["type"],
                    values=tuple(entry.get("values", ())),
                    min=entry.get("min"),
                    max=entry.get("max"),
                    unit=entry.get("unit", ""),
                    integer=bool(entry.get("integer", False)),
                )
            kinds[kind] = attrs
        relations = [tuple(t) for t in doc.get("relations", [])]
        for triple in relations:
            if len(triple) != 3:
                raise SchemaViolation(f"malformed relation triple {triple!r}")
            src, _, dst = triple
            if src not in kinds or dst not in kinds:
                raise SchemaViolation(f"relation {triple!r} references undeclared kind")
        return cls(kinds=kinds, relations=relations)


def load_schema(path: str | Path) -> Schema:
    with open(path, "r", encoding="utf-8") as fh:
        return Schema.from_json(json.load(fh))


def save_schema(schema: Schema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
