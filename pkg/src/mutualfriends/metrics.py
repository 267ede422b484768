"""Automatic evaluation statistics over transcript corpora: language
variation, task effectiveness, and opening-strategy measures."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .scenario import AlphaGroup, alpha_groups
from .session import Transcript


@dataclass
class CorpusStats:
    n_dialogues: int = 0
    token_loss: float | None = None  # model-supplied per-token cross-entropy
    utterance_len: float = 0.0  # L_u
    unigram_entropy: float = 0.0  # H, bits
    success: float = 0.0  # C
    success_per_turn: float = 0.0  # C_T
    success_per_select: float = 0.0  # C_S
    act_shares: dict[str, float] = field(default_factory=dict)  # incl. "select"
    first_entity_freq: float | None = None  # mean normalized KB count of first mentions
    first_attr_domain: float | None = None  # mean normalized unique-value count
    entities_per_dialogue: float = 0.0
    attrs_per_dialogue: float = 0.0
    first_attr_histogram: dict[str, int] = field(default_factory=dict)
    excluded_first_mentions: int = 0

    def to_dict(self) -> dict:
        return {
            "n_dialogues": self.n_dialogues,
            "token_loss": self.token_loss,
            "utterance_len": self.utterance_len,
            "unigram_entropy": self.unigram_entropy,
            "success": self.success,
            "success_per_turn": self.success_per_turn,
            "success_per_select": self.success_per_select,
            "act_shares": dict(sorted(self.act_shares.items())),
            "first_entity_freq": self.first_entity_freq,
            "first_attr_domain": self.first_attr_domain,
            "entities_per_dialogue": self.entities_per_dialogue,
            "attrs_per_dialogue": self.attrs_per_dialogue,
            "first_attr_histogram": dict(sorted(self.first_attr_histogram.items())),
            "excluded_first_mentions": self.excluded_first_mentions,
        }


ACT_ORDER = ["select", "inform", "ask", "answer", "greeting", "apology"]


def corpus_stats(transcripts: list[Transcript]) -> CorpusStats:
    """Language and effectiveness statistics.

    The per-turn and per-selection rates divide successful dialogues by
    total utterances and total selection events respectively, so that
    rate * mean-events-per-dialogue recovers the raw success rate.
    """
    if not transcripts:
        raise ValueError("empty corpus")
    stats = CorpusStats(n_dialogues=len(transcripts))
    n_utts = 0
    n_selects = 0
    n_success = 0
    token_counts: Counter[str] = Counter()
    act_counts: Counter[str] = Counter()
    total_tokens = 0
    for t in transcripts:
        n_success += t.outcome == "success"
        for ev in t.events:
            if ev.kind == "utterance":
                n_utts += 1
                total_tokens += len(ev.tokens)
                token_counts.update(ev.tokens)
                for act in ev.acts:
                    act_counts[act] += 1
            elif ev.kind == "select":
                n_selects += 1
                act_counts["select"] += 1
    stats.utterance_len = total_tokens / max(n_utts, 1)
    total = sum(token_counts.values())
    # summation in sorted token order keeps the value independent of
    # transcript ordering
    stats.unigram_entropy = -sum(
        (c / total) * math.log2(c / total)
        for _, c in sorted(token_counts.items())
    ) if total else 0.0
    stats.success = n_success / len(transcripts)
    stats.success_per_turn = n_success / max(n_utts, 1)
    stats.success_per_select = n_success / max(n_selects, 1)
    n_events = n_utts + n_selects
    stats.act_shares = {
        act: act_counts.get(act, 0) / max(n_events, 1) for act in ACT_ORDER
    }
    return stats


def strategy_stats(transcripts: list[Transcript]) -> CorpusStats:
    """Opening-strategy statistics: what each agent mentions first, and how
    much of the schema a dialogue touches.

    First-mention normalizations are with respect to the speaking agent's
    own KB: entity frequency over the max entity count, attribute domain
    size over the max unique-value count. Agents with no entity mentions
    are excluded and tallied.
    """
    if not transcripts:
        raise ValueError("empty corpus")
    stats = CorpusStats(n_dialogues=len(transcripts))
    ent1_vals: list[float] = []
    attr1_vals: list[float] = []
    ents_counts: list[int] = []
    attrs_counts: list[int] = []
    histogram: Counter[str] = Counter()
    excluded = 0
    for t in transcripts:
        groups = alpha_groups(t.scenario)
        dialogue_entities: set[str] = set()
        dialogue_attrs: set[str] = set()
        for side in ("A", "B"):
            kb = t.scenario.kb(side)
            max_count = max((kb.entity_count(e) for e in kb.entity_ids()), default=1)
            max_domain = max((kb.unique_value_count(a) for a in kb.attrs), default=1)
            first = None
            for ev in t.events:
                if ev.kind != "utterance":
                    continue
                linked = [l for l in ev.links if l.get("entity")]
                if ev.agent == side and first is None and linked:
                    first = linked[0]["entity"]
                for l in linked:
                    dialogue_entities.add(l["entity"])
            if first is None:
                excluded += 1
                continue
            ent1_vals.append(kb.entity_count(first) / max_count)
            attr = _attr_of(t, first)
            if attr is not None and attr in kb.attrs:
                attr1_vals.append(kb.unique_value_count(attr) / max_domain)
                if attr in groups:
                    histogram[groups[attr].value] += 1
        for e in dialogue_entities:
            attr = _attr_of(t, e)
            if attr is not None:
                dialogue_attrs.add(attr)
        ents_counts.append(len(dialogue_entities))
        attrs_counts.append(len(dialogue_attrs))
    stats.first_entity_freq = sum(ent1_vals) / len(ent1_vals) if ent1_vals else None
    stats.first_attr_domain = sum(attr1_vals) / len(attr1_vals) if attr1_vals else None
    stats.entities_per_dialogue = sum(ents_counts) / len(ents_counts)
    stats.attrs_per_dialogue = sum(attrs_counts) / len(attrs_counts)
    stats.first_attr_histogram = {
        g.value: histogram.get(g.value, 0) for g in AlphaGroup
    }
    stats.excluded_first_mentions = excluded
    return stats


def _attr_of(t: Transcript, entity_id: str) -> str | None:
    for attr in t.scenario.attr_names:
        for kb in (t.scenario.kb_a, t.scenario.kb_b):
            for item in kb.items:
                if item.entity_id(attr) == entity_id:
                    return attr
    return None


def full_stats(transcripts: list[Transcript],
               token_loss: float | None = None) -> CorpusStats:
    """Language, effectiveness, and strategy statistics in one record."""
    stats = corpus_stats(transcripts)
    strat = strategy_stats(transcripts)
    stats.first_entity_freq = strat.first_entity_freq
    stats.first_attr_domain = strat.first_attr_domain
    stats.entities_per_dialogue = strat.entities_per_dialogue
    stats.attrs_per_dialogue = strat.attrs_per_dialogue
    stats.first_attr_histogram = strat.first_attr_histogram
    stats.excluded_first_mentions = strat.excluded_first_mentions
    stats.token_loss = token_loss
    return stats
