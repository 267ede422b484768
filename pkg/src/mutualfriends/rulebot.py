"""Rule-based agent: weighted entities and items, pattern-matched
understanding, templated generation.

Entities start weighted by their KB count; partner mentions move the
mentioned entity by +-1 and its row/column neighbours by +-0.5, with the
sign set by negation words. Item weights accumulate their entities'
deltas; once an item's weight exceeds 1 the bot selects it with
probability 0.3 per turn.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .lexicon import (
    Lexicon,
    SpeechAct,
    classify_utterance,
    link_entities,
    realize_entity,
    tokenize,
)
from .scenario import KB
from .schema import Schema, SurfaceFormStore
from .session import SelectAction, Utter
from .util import make_rng

MENTION_DELTA = 1.0
RELATED_DELTA = 0.5
SAMPLING_FLOOR = 0.05
SELECT_PROB = 0.3
NEGATION_TOKENS = {"no", "none", "nothing", "zero"}


def load_templates() -> dict[str, list[str]]:
    text = resources.files("mutualfriends.data").joinpath("rulebot_templates.json").read_text()
    return json.loads(text)


# Attribute-specific relative clauses used inside the sentence templates.
# Phrased without question words so the bot's own statements never trip
# the ask classifier.
_PHRASES = {
    "name": "named {e}",
    "school": "that went to {e}",
    "major": "that studied {e}",
    "company": "that work at {e}",
    "hobby": "that like {e}",
    "time-of-day": "that prefer {e}",
    "location-preference": "that prefer {e}",
}


def entity_phrase(attr: str, realized: str) -> str:
    return _PHRASES.get(attr, "with {e}").format(e=realized)


@dataclass
class RuleBotConfig:
    mention_delta: float = MENTION_DELTA
    related_delta: float = RELATED_DELTA
    sampling_floor: float = SAMPLING_FLOOR
    select_prob: float = SELECT_PROB
    pair_prob: float = 0.75  # chance an inform/ask covers two row-mates
    exploit_prob: float = 0.2  # chance to re-mention weighted entities instead of fresh ones


@dataclass
class RuleAction:
    kind: str  # greet | inform | ask | answer | select
    entities: list[str] = field(default_factory=list)
    counts: list[int] = field(default_factory=list)
    item_index: int | None = None


class RuleBot:
    """One dialogue side. Not reusable across dialogues."""

    def __init__(self, kb: KB, schema: Schema, lexicon: Lexicon,
                 rng: int | np.random.Generator | None = None,
                 store: SurfaceFormStore | None = None,
                 config: RuleBotConfig | None = None):
        self.kb = kb
        self.schema = schema
        self.lexicon = lexicon
        self.rng = make_rng(rng)
        self.store = store
        self.config = config or RuleBotConfig()
        self.templates = load_templates()
        self.entity_weights: dict[str, float] = {}
        for item in kb.items:
            for _, value in item.values:
                self.entity_weights[value] = self.entity_weights.get(value, 0.0) + 1.0
        self.item_weights: list[float] = [1.0] * len(kb.items)
        self.mentioned: set[str] = set()  # entities I already asked/informed about
        self.pending_question: list[str] = []
        self.my_last_ask: list[str] = []  # what a bare "nope" from the partner refers to
        self.selected: int | None = None  # last selection the session accepted
        self._pending_select: int | None = None
        self._select_cooldown = 0  # turns to hold off after a select attempt
        self.greeted = False

    # -- understanding -------------------------------------------------------

    def observe(self, text: str) -> None:
        """Fold a partner utterance into entity and item weights.

        Negation polarity is detected per clause (split on "and"), so a
        mixed answer like "no friends named gloria and 3 friends that
        prefer indoors" decrements gloria but still credits indoors.
        """
        tokens = tokenize(text)
        links = link_entities(tokens, self.lexicon, self.kb)
        acts = classify_utterance(tokens, links)

        deltas: dict[str, float] = {}
        mentioned: list[str] = []

        def apply(eid: str, sign: float) -> None:
            if eid not in mentioned:
                mentioned.append(eid)
            deltas[eid] = deltas.get(eid, 0.0) + sign * self.config.mention_delta
            for other in self._related(eid):
                deltas[other] = deltas.get(other, 0.0) + sign * self.config.related_delta

        for clause in text.lower().split(" and "):
            ctoks = tokenize(clause)
            negative = bool(set(ctoks) & NEGATION_TOKENS) or "n't" in clause
            sign = -1.0 if negative else 1.0
            for link in link_entities(ctoks, self.lexicon, self.kb):
                if link.entity is not None:
                    apply(link.entity.id, sign)
        if not mentioned and SpeechAct.answer in acts and self.my_last_ask:
            # a bare yes/no refers to whatever I asked last
            sign = -1.0 if (set(tokens) & NEGATION_TOKENS or "n't" in text.lower()) else 1.0
            for eid in self.my_last_ask:
                apply(eid, sign)
        if SpeechAct.answer in acts or mentioned:
            self.my_last_ask = []

        for eid, delta in deltas.items():
            self.entity_weights[eid] = self.entity_weights.get(eid, 0.0) + delta
        for i, item in enumerate(self.kb.items):
            self.item_weights[i] += sum(deltas.get(v, 0.0) for _, v in item.values)

        if SpeechAct.ask in acts and mentioned:
            self.pending_question = mentioned[:2]

    def _related(self, entity_id: str) -> set[str]:
        """Entities sharing an item row with the mentioned one in my KB.

        Same-attribute values are deliberately not treated as related:
        sign-coupling an entire column swamps the per-item signal on
        small value sets (see the decisions log).
        """
        related: set[str] = set()
        for item in self.kb.items:
            values = dict(item.values)
            if entity_id in values.values():
                related.update(v for v in values.values() if v != entity_id)
        return related

    # -- policy ----------------------------------------------------------------

    def decide(self) -> RuleAction:
        best = int(np.argmax(self.item_weights))
        if self.item_weights[best] > 1.0 and best != self.selected \
                and self.rng.random() < self.config.select_prob:
            return RuleAction(kind="select", item_index=best)
        if self.pending_question:
            asked = self.pending_question
            self.pending_question = []
            return RuleAction(kind="answer", entities=asked,
                              counts=[self._count([e]) for e in asked])
        return self._content_action()

    def _content_action(self) -> RuleAction:
        entities = self._sample_entities()
        self.mentioned.update(entities)
        if self.rng.random() < 0.5:
            counts = [self._count(entities)]
            return RuleAction(kind="inform", entities=entities, counts=counts)
        return RuleAction(kind="ask", entities=entities)

    def _count(self, entity_ids: list[str]) -> int:
        """Items in my KB matching every given entity."""
        n = 0
        for item in self.kb.items:
            values = set(v for _, v in item.values)
            if all(e in values for e in entity_ids):
                n += 1
        return n

    def _weighted_pick(self, pool: list[str]) -> str:
        weights = np.array(
            [max(self.entity_weights.get(e, 0.0), self.config.sampling_floor) for e in pool]
        )
        probs = weights / weights.sum()
        return pool[int(self.rng.choice(len(pool), p=probs))]

    def _answer_detail(self, entity_id: str) -> str | None:
        """A row-mate from the best item matching an asked entity."""
        matches = [
            (self.item_weights[i], i) for i, item in enumerate(self.kb.items)
            if entity_id in {v for _, v in item.values}
        ]
        if not matches:
            return None
        _, best = max(matches)
        mates = [v for _, v in self.kb.items[best].values if v != entity_id]
        fresh = [v for v in mates if v not in self.mentioned]
        pool = fresh or mates
        if not pool:
            return None
        pick = self._weighted_pick(pool)
        self.mentioned.add(pick)
        return pick

    def _row_mates(self, entity_id: str) -> list[str]:
        return sorted({
            v for item in self.kb.items
            for _, v in item.values
            if entity_id in {x for _, x in item.values} and v != entity_id
        })

    def _sample_entities(self) -> list[str]:
        if self.selected is not None:
            # selection phase: drill the entities of the current front-runners
            order = np.argsort(-np.array(self.item_weights))
            pool = sorted({
                v for i in order[:3] for _, v in self.kb.items[int(i)].values
            })
        else:
            pool = sorted({v for item in self.kb.items for _, v in item.values})
        fresh = [e for e in pool if e not in self.mentioned]
        # explore fresh entities, sometimes re-drill what evidence favors
        if fresh and self.rng.random() >= self.config.exploit_prob:
            pool = fresh
        first = self._weighted_pick(pool)
        if self.rng.random() > self.config.pair_prob:
            return [first]
        # pair with a row-mate so two-entity mentions describe one item
        mates = self._row_mates(first)
        if not mates:
            return [first]
        return [first, self._weighted_pick(mates)]

    # -- generation ---------------------------------------------------------------

    def render(self, action: RuleAction) -> str:
        """Fill a sentence template for one action (select renders to no text)."""
        rng = self.rng
        if action.kind == "greet":
            return str(rng.choice(self.templates["greet"]))
        if action.kind == "select":
            return ""
        phrases = []
        for eid in action.entities:
            ent = self.schema.entity(eid)
            phrases.append(entity_phrase(ent.type, realize_entity(ent, self.store, rng)))
        phrase = " and ".join(phrases)
        if action.kind == "ask":
            return str(rng.choice(self.templates["ask"])).format(phrase=phrase)
        if action.kind == "answer" and len(action.entities) > 1:
            clauses = [
                (f"{c} friends {p}" if c > 0 else f"no friends {p}")
                for c, p in zip(action.counts, phrases)
            ]
            return "i have " + " and ".join(clauses)
        count = action.counts[0] if action.counts else 0
        key = "inform_pos" if count > 0 else "inform_neg"
        friends = "friend" if count == 1 else "friends"
        text = str(rng.choice(self.templates[key])).format(
            phrase=phrase, count=count, friends=friends)
        if action.kind == "answer" and count > 0 and len(action.entities) == 1:
            # volunteer a fact about a matching item, like a helpful human
            mate = self._answer_detail(action.entities[0])
            if mate is not None:
                ent = self.schema.entity(mate)
                detail = entity_phrase(ent.type, realize_entity(ent, self.store, rng))
                text += f" and 1 of them is {detail}" if ent.type == "name" \
                    else f" and 1 of them {detail[len('that '):] if detail.startswith('that ') else detail}"
        return text

    def act(self) -> Utter | SelectAction | None:
        action = self.decide()
        if action.kind == "select":
            self._pending_select = action.item_index
            return SelectAction(item_index=action.item_index)
        texts = []
        if not self.greeted:
            self.greeted = True
            texts.append(self.render(RuleAction(kind="greet")))
        if not texts and action.kind == "answer" and action.counts \
                and all(c == 0 for c in action.counts):
            # a bare denial carries no entity, which buys a second utterance
            texts.append(str(self.rng.choice(self.templates["answer_none"])))
            action = self._content_action()
        texts.append(self.render(action))
        if action.kind == "ask":
            self.my_last_ask = list(action.entities)
        return Utter(texts=[t for t in texts if t])

    def on_select_result(self, accepted: bool, item_index: int) -> None:
        """Session feedback: a throttled selection never happened, so the
        bot stays willing to retry it later."""
        if accepted:
            self.selected = item_index
        self._pending_select = None
