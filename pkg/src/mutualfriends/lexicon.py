"""Entity linking, entity realization, and speech-act classification.

Linking is rule-based: each schema entity gets a set of name variations
(canonical, acronym, word prefixes, morphological variants), spans are
matched greedily longest-first, and candidates are scored by a small
heuristic ranker with a bonus for entities present in the speaker's KB.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .schema import Entity, Schema, SurfaceFormStore
from .scenario import KB
from .util import make_rng

# Ranker constants. Frozen; golden-file tested.
SCORE_EXACT_CANONICAL = 3.0
SCORE_KNOWN_VARIATION = 2.0
SCORE_SUBSTRING = 1.5
SCORE_EDIT_DISTANCE = 1.0
KB_BONUS = 0.5
MIN_SUBSTRING_LEN = 4  # keeps function words like "the" from substring-linking
MIN_EDIT_SPAN_LEN = 5  # Levenshtein <= 1 allowed only for spans this long
MIN_PREFIX_LEN = 4
MAX_SPAN_TOKENS = 4

_STOPWORDS = {"of", "the", "and", "at", "for", "a", "an", "in", "on"}

QUESTION_WORDS = {"do", "does", "what", "who", "which", "how", "any", "anyone"}
ANSWER_WORDS = {"yes", "no", "nope", "yep", "yeah", "none"}
GREETING_WORDS = {"hi", "hello", "hey", "hiya"}

_PUNCT = re.compile(r"([?.!,'])")


class SpeechAct(str, Enum):
    inform = "inform"
    ask = "ask"
    answer = "answer"
    greeting = "greeting"
    apology = "apology"


@dataclass
class LinkedToken:
    span: str
    entity: Entity | None = None
    score: float = 0.0
    in_kb: bool = False


def tokenize(text: str) -> list[str]:
    """Lowercase, detach punctuation, split on whitespace."""
    return _PUNCT.sub(r" \1 ", text.lower()).split()


def levenshtein(a: str, b: str) -> int:
    if abs(len(a) - len(b)) > 2:
        return abs(len(a) - len(b))
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _morph_variants(word: str) -> set[str]:
    """Plural and gerund-stem variants of a single word."""
    out = {word + "s"}
    if word.endswith("ing") and len(word) > 4:
        stem = word[:-3]
        out.update({stem, stem + "e", stem + "es"})
        if len(stem) >= 2 and stem[-1] == stem[-2]:  # running -> run
            out.update({stem[:-1], stem[:-1] + "s"})
    return out


def entity_variations(entity: Entity) -> set[str]:
    """All stored name variations for one entity (edit-distance matches are
    computed at query time, not enumerated here)."""
    variations, _ = _variations_split(entity)
    return variations


def _variations_split(entity: Entity) -> tuple[set[str], set[str]]:
    """(all variations, edit-distance targets). Fuzzy matching applies to
    names and their words, never to bare prefixes, which would turn common
    words into near-misses of prefix fragments."""
    canonical = entity.canonical_name.lower()
    variations = {canonical}
    edit_targets = {canonical}
    words = canonical.split()
    if len(words) >= 2:
        acronym = "".join(w[0] for w in words)
        if len(acronym) >= 3:
            variations.add(acronym)
            edit_targets.add(acronym)
    content = [w for w in words if w not in _STOPWORDS]
    for word in content:
        for ln in range(MIN_PREFIX_LEN, len(word) + 1):
            variations.add(word[:ln])
        if len(word) >= MIN_PREFIX_LEN:
            edit_targets.add(word)
    if len(words) == 1:
        morph = {v for v in _morph_variants(canonical) if len(v) >= MIN_PREFIX_LEN}
        variations.update(morph)
        edit_targets.update(morph)
    return variations, edit_targets


class Lexicon:
    """Variation-string index over a schema. Immutable once built."""

    def __init__(self, schema: Schema):
        self.schema = schema
        self.variations: dict[str, set[str]] = {}
        self.edit_targets: dict[str, set[str]] = {}
        self.canonical: dict[str, str] = {}
        for ent in schema.entities():
            self.canonical[ent.id] = ent.canonical_name.lower()
            variations, targets = _variations_split(ent)
            for var in variations:
                self.variations.setdefault(var, set()).add(ent.id)
            for var in targets:
                self.edit_targets.setdefault(var, set()).add(ent.id)
        # sorted target list per (first char, length) bucket for edit-distance scans
        self._edit_buckets: dict[tuple[str, int], list[str]] = {}
        for var in self.edit_targets:
            key = (var[0], len(var))
            self._edit_buckets.setdefault(key, []).append(var)
        for bucket in self._edit_buckets.values():
            bucket.sort()
        # first words of multiword variations, to prune multi-token span attempts
        self.multiword_heads = {v.split()[0] for v in self.variations if " " in v}
        self._span_cache: dict[str, dict[str, float]] = {}

    def edit_distance_candidates(self, span: str) -> set[str]:
        """Entity ids whose some variation is within Levenshtein distance 1."""
        if len(span) < MIN_EDIT_SPAN_LEN:
            return set()
        found: set[str] = set()
        firsts = {span[0]}
        # a distance-1 edit can change the first character
        firsts.update(chr(c) for c in range(ord("a"), ord("z") + 1))
        for first in firsts:
            for ln in (len(span) - 1, len(span), len(span) + 1):
                for var in self._edit_buckets.get((first, ln), ()):
                    if levenshtein(span, var) <= 1:
                        found.update(self.edit_targets[var])
        return found


def build_lexicon(schema: Schema) -> Lexicon:
    return Lexicon(schema)


def _base_scores(span: str, lexicon: Lexicon) -> dict[str, float]:
    """KB-independent candidate scores for a span, memoized on the lexicon."""
    cached = lexicon._span_cache.get(span)
    if cached is not None:
        return cached
    scores: dict[str, float] = {}

    def bump(entity_id: str, score: float) -> None:
        if scores.get(entity_id, 0.0) < score:
            scores[entity_id] = score

    for entity_id in lexicon.variations.get(span, ()):
        if span == lexicon.canonical[entity_id]:
            bump(entity_id, SCORE_EXACT_CANONICAL)
        else:
            bump(entity_id, SCORE_KNOWN_VARIATION)
    if len(span) >= MIN_SUBSTRING_LEN:
        for entity_id, canonical in lexicon.canonical.items():
            if span in canonical:
                bump(entity_id, SCORE_SUBSTRING)
    for entity_id in lexicon.edit_distance_candidates(span):
        bump(entity_id, SCORE_EDIT_DISTANCE)
    lexicon._span_cache[span] = scores
    return scores


def _score_candidates(span: str, lexicon: Lexicon, kb_entities: set[str]) -> list[tuple[float, str]]:
    return [
        (score + (KB_BONUS if entity_id in kb_entities else 0.0), entity_id)
        for entity_id, score in _base_scores(span, lexicon).items()
    ]


def link_entities(tokens: list[str], lexicon: Lexicon, kb: KB | None = None) -> list[LinkedToken]:
    """Greedy longest-span entity linking, left to right.

    Candidates are ranked by match quality plus a KB-presence bonus; ties
    break toward the alphabetically first entity id. Unmatched tokens pass
    through with entity None.
    """
    kb_entities = kb.entity_ids() if kb is not None else set()
    out: list[LinkedToken] = []
    i = 0
    while i < len(tokens):
        linked = None
        # multi-token spans can only match when the first token heads a
        # multiword variation
        longest = i + MAX_SPAN_TOKENS if tokens[i] in lexicon.multiword_heads else i + 1
        for j in range(min(len(tokens), longest), i, -1):
            span = " ".join(tokens[i:j])
            candidates = _score_candidates(span, lexicon, kb_entities)
            if not candidates:
                continue
            best_score, best_id = min(candidates, key=lambda c: (-c[0], c[1]))
            linked = LinkedToken(
                span=span,
                entity=lexicon.schema.entity(best_id),
                score=best_score,
                in_kb=best_id in kb_entities,
            )
            i = j
            break
        if linked is None:
            out.append(LinkedToken(span=tokens[i]))
            i += 1
        else:
            out.append(linked)
    return out


def realize_entity(entity: Entity, store: SurfaceFormStore | None,
                   rng: int | np.random.Generator | None = None) -> str:
    """Sample a surface form from the store; fall back to the canonical name."""
    if store is None:
        return entity.canonical_name.lower()
    return store.sample(entity, make_rng(rng))


def classify_utterance(tokens: list[str], links: list[LinkedToken]) -> set[SpeechAct]:
    """Pattern-match an utterance into speech acts. Total and deterministic;
    an utterance can carry several acts, or none."""
    acts: set[SpeechAct] = set()
    token_set = set(tokens)
    if "?" in token_set or token_set & QUESTION_WORDS:
        acts.add(SpeechAct.ask)
    if token_set & ANSWER_WORDS:
        acts.add(SpeechAct.answer)
    if token_set & GREETING_WORDS:
        acts.add(SpeechAct.greeting)
    if "sorry" in token_set:
        acts.add(SpeechAct.apology)
    if SpeechAct.ask not in acts and any(l.entity is not None and l.in_kb for l in links):
        acts.add(SpeechAct.inform)
    return acts
