import numpy as np
import pytest

from mutualfriends.kgraph import (
    DialogueGraph,
    edge_labels,
    feature_dim,
    feature_matrix,
    node_features,
    to_dot,
)
from mutualfriends.lexicon import LinkedToken
from mutualfriends.scenario import KB, Item


def _kb(rows, attrs):
    return KB(attrs=attrs, items=[Item(tuple(row)) for row in rows])


def two_by_two(schema):
    rows = [
        (("company", "google"), ("hobby", "hiking")),
        (("company", "apple"), ("hobby", "chess")),
    ]
    return _kb(rows, ["company", "hobby"])


def test_from_kb_node_count(schema):
    g = DialogueGraph(two_by_two(schema), schema)
    # 2 items + 2 attributes + 4 distinct entities
    assert g.n_nodes == 8


def test_shared_value_degree(schema):
    rows = [
        (("company", "google"), ("hobby", "hiking")),
        (("company", "google"), ("hobby", "chess")),
    ]
    g = DialogueGraph(_kb(rows, ["company", "hobby"]), schema)
    google = g.node_id("entity", "google")
    # edges toward both items plus the attribute edge
    item_edges = [e for e in g.edges if e[0] == google and e[1] == "has_company_inv"]
    assert len(item_edges) == 2
    assert g.out_degree[google] == 3


def test_item_and_attribute_degrees(schema):
    rows = [
        (("company", "google"), ("hobby", "hiking"), ("name", "alice")),
        (("company", "apple"), ("hobby", "chess"), ("name", "bob")),
        (("company", "ibm"), ("hobby", "yoga"), ("name", "carol")),
        (("company", "intel"), ("hobby", "surfing"), ("name", "david")),
        (("company", "uber"), ("hobby", "baking"), ("name", "emma")),
    ]
    g = DialogueGraph(_kb(rows, ["company", "hobby", "name"]), schema)
    item0 = g.node_id("item", 0)
    assert g.out_degree[item0] == 3  # one edge per attribute
    company = g.node_id("attribute", "company")
    assert g.out_degree[company] == 5  # five distinct values
    feats = node_features(g, company)
    # degree 5 falls into the >=5 bucket (index 5)
    assert feats[5] == 1.0


def test_out_of_kb_mention_adds_isolatedish_node(schema):
    g = DialogueGraph(two_by_two(schema), schema)
    before = g.n_nodes
    links = [LinkedToken(span="columbia", entity=schema.entity("columbia-university"))]
    relevant = g.apply_utterance(links, "partner")
    assert g.n_nodes == before + 2  # entity node + its (new) attribute node
    node = g.node_id("entity", "columbia-university")
    assert node is not None
    assert relevant.node_ids == (node,)
    assert g.out_degree[node] == 1  # attribute edge only
    feats = node_features(g, node)
    assert feats[1] == 1.0  # degree bucket 1
    assert feats[-1] == 1.0  # mentioned this turn


def test_relevant_entity_fallback_chain(schema):
    g = DialogueGraph(two_by_two(schema), schema)
    google = schema.entity("google")
    # first utterance, no entities -> empty
    r1 = g.apply_utterance([], "partner")
    assert r1.node_ids == ()
    # mention google
    r2 = g.apply_utterance([LinkedToken(span="google", entity=google)], "partner")
    gid = g.node_id("entity", "google")
    assert r2.node_ids == (gid,)
    # "no" with no entities -> falls back to previous utterance's mentions
    r3 = g.apply_utterance([], "self")
    assert r3.node_ids == (gid,)
    # two entity-free utterances in a row -> empty again (one-step fallback)
    r4 = g.apply_utterance([], "partner")
    assert r4.node_ids == ()


def test_mention_flag_resets(schema):
    g = DialogueGraph(two_by_two(schema), schema)
    google = schema.entity("google")
    g.apply_utterance([LinkedToken(span="google", entity=google)], "partner")
    gid = g.node_id("entity", "google")
    assert node_features(g, gid)[-1] == 1.0
    g.apply_utterance([], "partner")
    assert node_features(g, gid)[-1] == 0.0


def test_monotone_growth(schema):
    g = DialogueGraph(two_by_two(schema), schema)
    seen = g.n_nodes
    edges = len(g.edges)
    for ent in ("columbia-university", "yoga", "alice"):
        g.apply_utterance([LinkedToken(span=ent, entity=schema.entity(ent))], "partner")
        assert g.n_nodes >= seen
        assert len(g.edges) >= edges
        seen, edges = g.n_nodes, len(g.edges)


def test_feature_dim_constant(schema):
    g = DialogueGraph(two_by_two(schema), schema)
    dim = feature_dim(schema)
    mat = feature_matrix(g)
    assert mat.shape == (g.n_nodes, dim)
    g.apply_utterance(
        [LinkedToken(span="columbia", entity=schema.entity("columbia-university"))], "partner")
    assert feature_matrix(g).shape == (g.n_nodes, dim)
    # one-hot blocks: degree and kind each have exactly one hot bit
    n_buckets = 6
    kinds = 2 + len(schema.attributes)
    for row in feature_matrix(g):
        assert row[:n_buckets].sum() == 1.0
        assert row[n_buckets:n_buckets + kinds].sum() == 1.0


def test_unknown_node_features_raise(schema):
    g = DialogueGraph(two_by_two(schema), schema)
    with pytest.raises(KeyError):
        node_features(g, g.n_nodes + 5)


def test_edge_labels_fixed_vocabulary(schema):
    labels = edge_labels(schema)
    assert len(labels) == 2 * len(schema.attributes) + 2
    assert "instance_of" in labels and "has_value" in labels


def test_dot_dump(schema):
    g = DialogueGraph(two_by_two(schema), schema)
    dot = to_dot(g)
    assert dot.startswith("digraph")
    assert "has_company" in dot
