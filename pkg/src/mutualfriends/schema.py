"""Attribute schema, entity catalog, and the surface-form store used for
entity realization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .util import make_rng


class SchemaError(ValueError):
    """Raised when a schema file fails to parse or validate."""


@dataclass(frozen=True)
class Entity:
    id: str
    type: str  # owning attribute name
    canonical_name: str


@dataclass(frozen=True)
class Attribute:
    name: str
    value_set: tuple[Entity, ...]


class Schema:
    """Immutable attribute/entity catalog. Safe to share across threads."""

    def __init__(self, attributes: list[Attribute]):
        self.attributes = tuple(attributes)
        self._by_id: dict[str, Entity] = {}
        self._attr_by_name: dict[str, Attribute] = {}
        for attr in self.attributes:
            self._attr_by_name[attr.name] = attr
            for ent in attr.value_set:
                self._by_id[ent.id] = ent

    @property
    def attribute_names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def attribute(self, name: str) -> Attribute:
        return self._attr_by_name[name]

    def entity(self, entity_id: str) -> Entity:
        return self._by_id[entity_id]

    def has_entity(self, entity_id: str) -> bool:
        return entity_id in self._by_id

    def entities(self) -> list[Entity]:
        return [e for a in self.attributes for e in a.value_set]

    def to_dict(self) -> dict:
        return {
            "attributes": [
                {
                    "name": a.name,
                    "values": [{"id": e.id, "canonical": e.canonical_name} for e in a.value_set],
                }
                for a in self.attributes
            ]
        }


def _schema_from_dict(data: dict) -> Schema:
    if not isinstance(data, dict) or "attributes" not in data:
        raise SchemaError("schema file must be an object with an 'attributes' list")
    attributes = []
    for raw in data["attributes"]:
        name = raw.get("name")
        if not name:
            raise SchemaError("attribute missing 'name'")
        values = tuple(
            Entity(id=v["id"], type=name, canonical_name=v["canonical"])
            for v in raw.get("values", [])
        )
        attributes.append(Attribute(name=name, value_set=values))
    schema = Schema(attributes)
    violations = validate_schema(schema)
    if violations:
        raise SchemaError("; ".join(violations))
    return schema


def load_schema(path: str) -> Schema:
    """Load and validate a schema JSON file.

    Raises SchemaError on parse failure, duplicate attribute or entity ids,
    or empty value sets.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"cannot parse schema file {path!r}: {e}") from e
    return _schema_from_dict(data)


def save_schema(schema: Schema, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(schema.to_dict(), f, indent=1)


def default_schema() -> Schema:
    """The bundled 7-attribute desk-scale catalog."""
    text = resources.files("mutualfriends.data").joinpath("default_schema.json").read_text()
    return _schema_from_dict(json.loads(text))


def validate_schema(schema: Schema) -> list[str]:
    """Return a list of invariant violations; empty means the schema is valid."""
    violations: list[str] = []
    seen_attrs: set[str] = set()
    seen_ids: set[str] = set()
    for attr in schema.attributes:
        if attr.name in seen_attrs:
            violations.append(f"duplicate attribute name {attr.name!r}")
        seen_attrs.add(attr.name)
        if len(attr.value_set) == 0:
            violations.append(f"attribute {attr.name!r} has an empty value set")
        for ent in attr.value_set:
            if ent.id in seen_ids:
                violations.append(f"duplicate entity id {ent.id!r}")
            seen_ids.add(ent.id)
            if not ent.canonical_name:
                violations.append(f"entity {ent.id!r} has an empty canonical name")
            if ent.type != attr.name:
                violations.append(f"entity {ent.id!r} typed {ent.type!r} inside {attr.name!r}")
    return violations


@dataclass
class SurfaceFormStore:
    """Counts of observed surface strings per entity.

    Mutation is single-writer; snapshots via to_dict are safe to share.
    """

    counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def add(self, entity_id: str, surface: str, n: int = 1) -> None:
        surface = surface.lower()
        bucket = self.counts.setdefault(entity_id, {})
        bucket[surface] = bucket.get(surface, 0) + n

    def forms(self, entity_id: str) -> dict[str, int]:
        return dict(self.counts.get(entity_id, {}))

    def distribution(self, entity_id: str) -> list[tuple[str, float]]:
        forms = self.counts.get(entity_id, {})
        total = sum(forms.values())
        if total == 0:
            return []
        return [(s, c / total) for s, c in sorted(forms.items())]

    def sample(self, entity: Entity, rng: int | np.random.Generator | None = None) -> str:
        """Sample a surface form; falls back to the lowercased canonical name."""
        rng = make_rng(rng)
        forms = sorted(self.counts.get(entity.id, {}).items())
        total = sum(c for _, c in forms)
        if total == 0:
            return entity.canonical_name.lower()
        r = rng.random() * total
        acc = 0
        for surface, count in forms:
            acc += count
            if r < acc:
                return surface
        return forms[-1][0]

    def to_dict(self) -> dict:
        return {e: dict(sorted(forms.items())) for e, forms in sorted(self.counts.items())}

    @classmethod
    def from_dict(cls, data: dict) -> "SurfaceFormStore":
        return cls(counts={e: {s: int(c) for s, c in forms.items()} for e, forms in data.items()})

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=1)

    @classmethod
    def load(cls, path: str) -> "SurfaceFormStore":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def record_surface_forms(store: SurfaceFormStore, transcript, schema: Schema) -> SurfaceFormStore:
    """Fold one transcript's entity-linked spans into the store.

    Each linked span increments the (entity, lowercased span) count. Raises
    KeyError if a link references an entity missing from the schema.
    """
    for event in transcript.events:
        if event.kind != "utterance":
            continue
        for link in event.links:
            if link.get("entity") is None:
                continue
            entity_id = link["entity"]
            if not schema.has_entity(entity_id):
                raise KeyError(f"linked entity {entity_id!r} not in schema")
            store.add(entity_id, link["span"])
    return store
