"""Session-facing agent adapters and the self-play driver."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .dynonet import SELECT, DynoNet, Token
from .lexicon import Lexicon, link_entities, realize_entity, tokenize
from .scenario import KB, Scenario
from .schema import Schema, SurfaceFormStore
from .session import Limits, SelectAction, Transcript, Utter, run_dialogue
from .util import make_rng


class NeuralAgent:
    """Wraps the graph-grounded model for live play on one KB side."""

    def __init__(self, model: DynoNet, kb: KB, lexicon: Lexicon,
                 rng: int | np.random.Generator | None = None,
                 store: SurfaceFormStore | None = None):
        self.model = model
        self.kb = kb
        self.lexicon = lexicon
        self.rng = make_rng(rng)
        self.store = store
        self.state = model.new_dialogue(kb)

    def observe(self, text: str) -> None:
        tokens = tokenize(text)
        links = link_entities(tokens, self.lexicon, self.kb)
        refs: list[Token] = []
        for link in links:
            if link.entity is not None:
                refs.append(("entity", link.entity.id))
            else:
                refs.append(("word", link.span))
        self.model.encode_and_apply(self.state, refs, "partner", links=links)

    def act(self) -> Utter | SelectAction | None:
        tokens = self.model.sample_utterance(self.state, self.rng)
        self.model.encode_and_apply(self.state, tokens, "self")
        if tokens and tokens[0] == ("word", SELECT):
            if len(tokens) >= 2 and tokens[1][0] == "item":
                return SelectAction(item_index=int(tokens[1][1]))
            return None
        words = []
        for kind, value in tokens:
            if kind == "word":
                words.append(str(value))
            elif kind == "entity":
                ent = self.model.schema.entity(str(value))
                words.append(realize_entity(ent, self.store, self.rng))
            else:
                words.append(f"item-{value}")
        text = " ".join(words).strip()
        return Utter(texts=[text]) if text else None


class ReplayAgent:
    """Re-emits one side of a recorded transcript, burst by burst."""

    def __init__(self, transcript: Transcript, side: str):
        self.bursts: list[Utter | SelectAction] = []
        current: list[str] = []
        for ev in transcript.events:
            if ev.agent != side:
                if current:
                    self.bursts.append(Utter(texts=current))
                    current = []
                continue
            if ev.kind == "utterance":
                current.append(ev.text)
            elif ev.kind == "select":
                if current:
                    self.bursts.append(Utter(texts=current))
                    current = []
                self.bursts.append(SelectAction(item_index=ev.item_index))
        if current:
            self.bursts.append(Utter(texts=current))
        self._cursor = 0

    def observe(self, text: str) -> None:
        pass

    def act(self) -> Utter | SelectAction | None:
        if self._cursor >= len(self.bursts):
            return None
        action = self.bursts[self._cursor]
        self._cursor += 1
        return action


AGENT_KINDS = ("rule", "stanonet", "dynonet", "replay")


def make_agent(kind: str, kb: KB, schema: Schema, lexicon: Lexicon,
               rng: np.random.Generator,
               model: DynoNet | None = None,
               store: SurfaceFormStore | None = None,
               replay: tuple[Transcript, str] | None = None):
    if kind == "rule":
        from .rulebot import RuleBot

        return RuleBot(kb, schema, lexicon, rng=rng, store=store)
    if kind in ("dynonet", "stanonet"):
        if model is None:
            raise ValueError(f"agent kind {kind!r} needs a model")
        return NeuralAgent(model, kb, lexicon, rng=rng, store=store)
    if kind == "replay":
        if replay is None:
            raise ValueError("replay agent needs a recorded transcript and side")
        return ReplayAgent(*replay)
    raise ValueError(f"unknown agent kind {kind!r}")


def _play_one(args) -> Transcript:
    (index, scenario, kind_a, kind_b, schema, lexicon, seed,
     model_a, model_b, store, limits, replay_source, real_clock) = args
    from .session import RealClock

    seeds = np.random.SeedSequence(seed).spawn(3)
    agent_a = make_agent(kind_a, scenario.kb_a, schema, lexicon,
                         np.random.default_rng(seeds[0]), model=model_a, store=store,
                         replay=(replay_source, "A") if replay_source else None)
    agent_b = make_agent(kind_b, scenario.kb_b, schema, lexicon,
                         np.random.default_rng(seeds[1]), model=model_b, store=store,
                         replay=(replay_source, "B") if replay_source else None)
    return run_dialogue(
        agent_a, agent_b, scenario, lexicon,
        limits=limits, clock=RealClock() if real_clock else None,
        rng=np.random.default_rng(seeds[2]),
        agent_names={"A": kind_a, "B": kind_b},
        dialogue_id=f"d{index:05d}",
    )


def run_selfplay(kind_a: str, kind_b: str, scenarios: list[Scenario],
                 schema: Schema, lexicon: Lexicon, seed: int = 0,
                 model_a: DynoNet | None = None, model_b: DynoNet | None = None,
                 store: SurfaceFormStore | None = None,
                 limits: Limits | None = None,
                 replay_transcripts: list[Transcript] | None = None,
                 real_clock: bool = False,
                 jobs: int = 1) -> list[Transcript]:
    """Run one dialogue per scenario; per-dialogue seeds derive from the
    master seed so results are independent of job count."""
    dialogue_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(len(scenarios))]
    tasks = [
        (i, sc, kind_a, kind_b, schema, lexicon, dialogue_seeds[i],
         model_a, model_b, store, limits,
         replay_transcripts[i % len(replay_transcripts)] if replay_transcripts else None,
         real_clock)
        for i, sc in enumerate(scenarios)
    ]
    if jobs <= 1:
        return [_play_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_play_one, tasks, chunksize=8))


def success_rate(transcripts: list[Transcript]) -> float:
    if not transcripts:
        return 0.0
    return sum(t.outcome == "success" for t in transcripts) / len(transcripts)
