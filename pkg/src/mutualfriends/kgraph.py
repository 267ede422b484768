"""Dynamic knowledge graph over an agent's KB and the dialogue history.

Nodes are items, attributes, and entity values; edges are labeled in both
directions so message passing can travel item->entity->attribute and back.
The graph only grows: entities mentioned mid-dialogue that are outside the
KB get their own nodes, linked to their attribute node only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lexicon import LinkedToken
from .scenario import KB
from .schema import Schema

DEGREE_BUCKETS = (0, 1, 2, 3, 4)  # plus a final ">=5" bucket

ITEM = "item"
ATTRIBUTE = "attribute"
ENTITY = "entity"


def edge_labels(schema: Schema) -> list[str]:
    """The fixed edge-label vocabulary for a schema."""
    labels = []
    for name in schema.attribute_names:
        labels.append(f"has_{name}")
        labels.append(f"has_{name}_inv")
    labels.extend(["instance_of", "has_value"])
    return labels


@dataclass
class Node:
    kind: str  # item | attribute | entity
    ref: str | int  # item index, attribute name, or entity id

    @property
    def key(self) -> tuple[str, str | int]:
        return (self.kind, self.ref)


@dataclass
class RelevantEntities:
    """Entity nodes the current utterance is about (with one-step fallback
    to the previous utterance when the current one has no entities)."""

    node_ids: tuple[int, ...] = ()


class DialogueGraph:
    def __init__(self, kb: KB, schema: Schema):
        self.schema = schema
        self.kb = kb
        self.turn = 0
        self.nodes: list[Node] = []
        self.edges: list[tuple[int, str, int]] = []  # canonical enumeration order
        self.out_degree: list[int] = []
        self._index: dict[tuple[str, str | int], int] = {}
        self.current_mentions: set[int] = set()
        self._prev_raw_mentions: tuple[int, ...] = ()
        self._build_from_kb()

    # -- construction -----------------------------------------------------

    def _add_node(self, kind: str, ref: str | int) -> int:
        key = (kind, ref)
        if key in self._index:
            return self._index[key]
        idx = len(self.nodes)
        self.nodes.append(Node(kind, ref))
        self.out_degree.append(0)
        self._index[key] = idx
        return idx

    def _add_edge(self, src: int, label: str, dst: int) -> None:
        self.edges.append((src, label, dst))
        self.out_degree[src] += 1

    def _build_from_kb(self) -> None:
        for i in range(len(self.kb.items)):
            self._add_node(ITEM, i)
        for attr in self.kb.attrs:
            self._add_node(ATTRIBUTE, attr)
        for i, item in enumerate(self.kb.items):
            item_idx = self._index[(ITEM, i)]
            for attr, entity_id in item.values:
                attr_idx = self._index[(ATTRIBUTE, attr)]
                is_new = (ENTITY, entity_id) not in self._index
                ent_idx = self._add_node(ENTITY, entity_id)
                if is_new:
                    self._add_edge(ent_idx, "instance_of", attr_idx)
                    self._add_edge(attr_idx, "has_value", ent_idx)
                self._add_edge(item_idx, f"has_{attr}", ent_idx)
                self._add_edge(ent_idx, f"has_{attr}_inv", item_idx)

    # -- queries ----------------------------------------------------------

    def node_id(self, kind: str, ref: str | int) -> int | None:
        return self._index.get((kind, ref))

    def has_entity(self, entity_id: str) -> bool:
        return (ENTITY, entity_id) in self._index

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def item_node_ids(self) -> list[int]:
        return [self._index[(ITEM, i)] for i in range(len(self.kb.items))]

    # -- dialogue updates -------------------------------------------------

    def apply_utterance(self, links: list[LinkedToken], speaker: str) -> RelevantEntities:
        """Advance one turn: add nodes for new mentions, refresh the
        mentioned-this-turn flags, and compute the relevant-entity set."""
        self.turn += 1
        raw: list[int] = []
        for link in links:
            if link.entity is None:
                continue
            key = (ENTITY, link.entity.id)
            if key in self._index:
                idx = self._index[key]
            else:
                # out-of-KB mention: entity node with an attribute edge only
                attr_idx = self._add_node(ATTRIBUTE, link.entity.type)
                idx = self._add_node(ENTITY, link.entity.id)
                self._add_edge(idx, "instance_of", attr_idx)
            if idx not in raw:
                raw.append(idx)
        self.current_mentions = set(raw)
        relevant = tuple(raw) if raw else self._prev_raw_mentions
        self._prev_raw_mentions = tuple(raw)
        return RelevantEntities(node_ids=relevant)


# -- node features ---------------------------------------------------------


def feature_dim(schema: Schema) -> int:
    # degree buckets + (item, attribute, one slot per entity type) + mention bit
    return (len(DEGREE_BUCKETS) + 1) + (2 + len(schema.attributes)) + 1


def node_features(graph: DialogueGraph, node_id: int) -> np.ndarray:
    """One-hot structural features for a node: degree bucket, kind, and the
    mentioned-in-current-turn bit."""
    if node_id < 0 or node_id >= graph.n_nodes:
        raise KeyError(f"unknown node {node_id}")
    schema = graph.schema
    n_buckets = len(DEGREE_BUCKETS) + 1
    kinds = 2 + len(schema.attributes)
    vec = np.zeros(n_buckets + kinds + 1, dtype=np.float64)

    degree = graph.out_degree[node_id]
    bucket = degree if degree < len(DEGREE_BUCKETS) else len(DEGREE_BUCKETS)
    vec[bucket] = 1.0

    node = graph.nodes[node_id]
    if node.kind == ITEM:
        kind_slot = 0
    elif node.kind == ATTRIBUTE:
        kind_slot = 1
    else:
        kind_slot = 2 + schema.attribute_names.index(schema.entity(node.ref).type)
    vec[n_buckets + kind_slot] = 1.0

    if node_id in graph.current_mentions:
        vec[-1] = 1.0
    return vec


def feature_matrix(graph: DialogueGraph) -> np.ndarray:
    """Feature rows for all nodes. The degree/kind blocks only change when
    the graph grows, so they are cached per (node count, edge count)."""
    key = (graph.n_nodes, len(graph.edges))
    cached = getattr(graph, "_feature_cache", None)
    if cached is None or cached[0] != key:
        static = np.stack([node_features(graph, v) for v in range(graph.n_nodes)])
        static[:, -1] = 0.0
        graph._feature_cache = (key, static)
    else:
        static = cached[1]
    out = static.copy()
    if graph.current_mentions:
        out[sorted(graph.current_mentions), -1] = 1.0
    return out


def to_dot(graph: DialogueGraph) -> str:
    """DOT-format dump for debugging."""
    lines = ["digraph dialogue {"]
    for idx, node in enumerate(graph.nodes):
        shape = {"item": "box", "attribute": "diamond", "entity": "ellipse"}[node.kind]
        label = f"{node.kind}:{node.ref}"
        lines.append(f'  n{idx} [label="{label}", shape={shape}];')
    for src, label, dst in graph.edges:
        lines.append(f'  n{src} -> n{dst} [label="{label}"];')
    lines.append("}")
    return "\n".join(lines)
