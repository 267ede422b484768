"""Dialogue session engine: alternating agent turns, human-like send pacing,
selection throttling, and transcript logging.

Simulated-clock sessions are fully deterministic given (scenario, seeds);
the live service reuses the same pacing plan and throttle logic under a
real clock.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from typing import Protocol

import numpy as np

from .lexicon import Lexicon, LinkedToken, classify_utterance, link_entities, tokenize
from .scenario import KB, Scenario
from .util import make_rng

TYPING_CPS = 7.0  # characters per second
TYPING_JITTER_S = 1.5
GAP_RANGE_S = (1.0, 2.0)
SELECT_THROTTLE_MS = 10_000
WALL_LIMIT_MS = 300_000
TURN_CAP = 46


@dataclass
class Limits:
    wall_ms: int = WALL_LIMIT_MS
    select_throttle_ms: int = SELECT_THROTTLE_MS
    turn_cap: int = TURN_CAP


class SimulatedClock:
    """Deterministic clock; advances only through pacing rules."""

    def __init__(self) -> None:
        self._now_ms = 0

    def now_ms(self) -> int:
        return self._now_ms

    def advance_ms(self, ms: int) -> None:
        if ms < 0:
            raise ValueError("clock cannot go backwards")
        self._now_ms += ms


class RealClock:
    def __init__(self) -> None:
        self._start = time.monotonic()

    def now_ms(self) -> int:
        return int((time.monotonic() - self._start) * 1000)

    def advance_ms(self, ms: int) -> None:
        time.sleep(ms / 1000.0)


# -- agent interface ---------------------------------------------------------


@dataclass
class Utter:
    texts: list[str]


@dataclass
class SelectAction:
    item_index: int


class Agent(Protocol):
    def observe(self, text: str) -> None:
        """Receive a partner utterance."""

    def act(self) -> Utter | SelectAction | None:
        """Produce this turn's action: candidate utterances, a selection,
        or nothing."""


# -- transcript --------------------------------------------------------------


@dataclass
class Event:
    time_ms: int
    agent: str  # "A" | "B"
    kind: str  # utterance | select | typing
    text: str = ""
    tokens: list[str] = field(default_factory=list)
    links: list[dict] = field(default_factory=list)
    acts: list[str] = field(default_factory=list)
    item_index: int | None = None
    item: dict | None = None
    turn: int = 0

    def to_dict(self) -> dict:
        d = {"time_ms": self.time_ms, "agent": self.agent, "kind": self.kind,
             "turn": self.turn}
        if self.kind == "utterance":
            d.update(text=self.text, tokens=self.tokens, links=self.links, acts=self.acts)
        elif self.kind == "select":
            d.update(item_index=self.item_index, item=self.item)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(
            time_ms=d["time_ms"], agent=d["agent"], kind=d["kind"],
            text=d.get("text", ""), tokens=d.get("tokens", []),
            links=d.get("links", []), acts=d.get("acts", []),
            item_index=d.get("item_index"), item=d.get("item"),
            turn=d.get("turn", 0),
        )


@dataclass
class Transcript:
    id: str
    scenario: Scenario
    agents: dict[str, str]  # side -> agent kind
    outcome: str  # success | failure | timeout
    events: list[Event]
    turns: int = 0
    failure_cause: str | None = None

    @property
    def utterances(self) -> list[Event]:
        return [e for e in self.events if e.kind == "utterance"]

    @property
    def selections(self) -> list[Event]:
        return [e for e in self.events if e.kind == "select"]

    def final_selection(self, side: str) -> Event | None:
        chosen = [e for e in self.selections if e.agent == side]
        return chosen[-1] if chosen else None

    def to_lines(self) -> list[str]:
        header = {
            "v": 1, "kind": "header", "id": self.id,
            "scenario": self.scenario.to_dict(),
            "agents": self.agents, "outcome": self.outcome, "turns": self.turns,
        }
        if self.failure_cause is not None:
            header["failure_cause"] = self.failure_cause
        return [json.dumps(header)] + [json.dumps(e.to_dict()) for e in self.events]

    @classmethod
    def from_records(cls, header: dict, events: list[dict]) -> "Transcript":
        return cls(
            id=header["id"], scenario=Scenario.from_dict(header["scenario"]),
            agents=header["agents"], outcome=header["outcome"],
            events=[Event.from_dict(e) for e in events], turns=header.get("turns", 0),
            failure_cause=header.get("failure_cause"),
        )


def save_transcripts(path: str, transcripts: list[Transcript]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        for t in transcripts:
            for line in t.to_lines():
                f.write(line + "\n")
    import os

    os.replace(tmp, path)


def load_transcripts(path: str) -> list[Transcript]:
    out: list[Transcript] = []
    header, events = None, []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("kind") == "header":
                if header is not None:
                    out.append(Transcript.from_records(header, events))
                header, events = rec, []
            else:
                events.append(rec)
    if header is not None:
        out.append(Transcript.from_records(header, events))
    return out


# -- pacing -------------------------------------------------------------------


def plan_turn(texts: list[str], entity_bearing: list[bool],
              rng: np.random.Generator) -> list[tuple[int, str]]:
    """Apply the turn-taking rules to candidate utterances.

    At most one utterance goes out if the first carries an entity, two
    otherwise. Returns (delay_ms_before_send, text) pairs where each delay
    covers typing time (len/7 s + jitter) and, for the second utterance,
    the inter-utterance gap.
    """
    if not texts:
        return []
    allowed = 1 if entity_bearing[0] else 2
    plan: list[tuple[int, str]] = []
    for i, text in enumerate(texts[:allowed]):
        typing_s = len(text) / TYPING_CPS + rng.uniform(0.0, TYPING_JITTER_S)
        delay = typing_s + (rng.uniform(*GAP_RANGE_S) if i > 0 else 0.0)
        plan.append((int(round(delay * 1000)), text))
    return plan


# -- selection handling ---------------------------------------------------------


def handle_selection(last_accepted_ms: int | None, now_ms: int, kb: KB,
                     item_index: int,
                     throttle_ms: int = SELECT_THROTTLE_MS) -> tuple[str, int]:
    """Throttle check for one selection. Returns ("accepted", 0) or
    ("throttled", retry_after_ms). Raises IndexError for unknown items."""
    if item_index < 0 or item_index >= len(kb.items):
        raise IndexError(f"item {item_index} not in KB")
    if last_accepted_ms is not None and now_ms - last_accepted_ms < throttle_ms:
        return "throttled", throttle_ms - (now_ms - last_accepted_ms)
    return "accepted", 0


# -- the dialogue loop ------------------------------------------------------------


def run_dialogue(agent_a: Agent, agent_b: Agent, scenario: Scenario,
                 lexicon: Lexicon,
                 limits: Limits | None = None,
                 clock: SimulatedClock | RealClock | None = None,
                 rng: int | np.random.Generator | None = None,
                 agent_names: dict[str, str] | None = None,
                 dialogue_id: str = "d0") -> Transcript:
    """Run one dialogue between two agents.

    Agents alternate activation; each activation is one turn (burst).
    Terminates on matching selections (success) or the turn cap (failure).
    With a real clock, pacing delays actually sleep and the wall limit
    applies (outcome "timeout"); the default simulated clock is
    deterministic and bounded by the turn cap only.
    """
    limits = limits or Limits()
    rng = make_rng(rng)
    real_mode = isinstance(clock, RealClock)
    clock = clock if clock is not None else SimulatedClock()
    agents = {"A": agent_a, "B": agent_b}
    kbs = {"A": scenario.kb_a, "B": scenario.kb_b}
    events: list[Event] = []
    last_select_ms: dict[str, int | None] = {"A": None, "B": None}
    final_choice: dict[str, Event | None] = {"A": None, "B": None}
    outcome = "failure"
    failure_cause = None
    turns = 0
    side = "A"

    while turns < limits.turn_cap:
        if real_mode and clock.now_ms() >= limits.wall_ms:
            outcome = "timeout"
            break
        agent = agents[side]
        try:
            action = agent.act()
        except Exception as e:  # an agent crash fails the dialogue, with cause
            outcome = "failure"
            failure_cause = f"{side}: {type(e).__name__}: {e}"
            turns += 1
            break
        turns += 1
        if isinstance(action, SelectAction):
            verdict, _retry = handle_selection(
                last_select_ms[side], clock.now_ms(), kbs[side], action.item_index,
                limits.select_throttle_ms,
            )
            feedback = getattr(agent, "on_select_result", None)
            if feedback is not None:
                feedback(verdict == "accepted", action.item_index)
            if verdict == "accepted":
                item = kbs[side].items[action.item_index]
                ev = Event(
                    time_ms=clock.now_ms(), agent=side, kind="select",
                    item_index=action.item_index, item=item.as_dict(), turn=turns,
                )
                events.append(ev)
                last_select_ms[side] = clock.now_ms()
                final_choice[side] = ev
                a, b = final_choice["A"], final_choice["B"]
                if a is not None and b is not None and a.item == b.item:
                    outcome = "success"
                    break
        elif isinstance(action, Utter) and action.texts:
            linked = [link_entities(tokenize(t), lexicon, kbs[side]) for t in action.texts]
            bearing = [any(l.entity is not None for l in ls) for ls in linked]
            for delay_ms, text in plan_turn(action.texts, bearing, rng):
                events.append(Event(time_ms=clock.now_ms(), agent=side, kind="typing",
                                    turn=turns))
                clock.advance_ms(delay_ms)
                toks = tokenize(text)
                links = link_entities(toks, lexicon, kbs[side])
                acts = sorted(a.value for a in classify_utterance(toks, links))
                events.append(Event(
                    time_ms=clock.now_ms(), agent=side, kind="utterance", text=text,
                    tokens=toks,
                    links=[{"span": l.span,
                            "entity": l.entity.id if l.entity else None,
                            "in_kb": l.in_kb} for l in links],
                    acts=acts, turn=turns,
                ))
                other = "B" if side == "A" else "A"
                try:
                    agents[other].observe(text)
                except Exception as e:
                    outcome = "failure"
                    failure_cause = f"{other}: {type(e).__name__}: {e}"
                    break
            if failure_cause is not None:
                break
        side = "B" if side == "A" else "A"

    return Transcript(
        id=dialogue_id, scenario=scenario,
        agents=agent_names or {"A": "agent", "B": "agent"},
        outcome=outcome, events=events, turns=turns, failure_cause=failure_cause,
    )


# -- post-hoc validation -----------------------------------------------------------


def validate_transcript(t: Transcript, check_pacing: bool = True,
                        throttle_ms: int = SELECT_THROTTLE_MS) -> list[str]:
    """Check pacing and throttle rules on a finished transcript; returns a
    list of violations (empty when clean)."""
    problems: list[str] = []
    last_time = 0
    for ev in t.events:
        if ev.time_ms < last_time:
            problems.append(f"timestamps decrease at {ev.time_ms}")
        last_time = ev.time_ms

    last_select: dict[str, int | None] = {"A": None, "B": None}
    for ev in t.events:
        if ev.kind != "select":
            continue
        prev = last_select[ev.agent]
        if prev is not None and ev.time_ms - prev < throttle_ms:
            problems.append(f"{ev.agent} reselected after {ev.time_ms - prev} ms")
        last_select[ev.agent] = ev.time_ms

    if check_pacing:
        # bursts: events sharing one (agent, turn) activation
        bursts: list[list[Event]] = []
        for ev in t.events:
            if bursts and bursts[-1][0].agent == ev.agent and bursts[-1][0].turn == ev.turn:
                bursts[-1].append(ev)
            else:
                bursts.append([ev])
        for burst in bursts:
            utts = [e for e in burst if e.kind == "utterance"]
            if len(utts) > 2:
                problems.append(f"burst of {len(utts)} utterances at {burst[0].time_ms}")
            if len(utts) >= 1 and any(l.get("entity") for l in utts[0].links) and len(utts) > 1:
                problems.append(f"entity-bearing first utterance followed by more at {utts[0].time_ms}")
            typing_times = {e.time_ms for e in burst if e.kind == "typing"}
            for u in utts:
                min_typing = len(u.text) / TYPING_CPS * 1000
                if not any(u.time_ms - ts >= int(min_typing) - 1 for ts in typing_times):
                    problems.append(f"utterance at {u.time_ms} sent faster than typing speed")

    sel_a, sel_b = t.final_selection("A"), t.final_selection("B")
    matched = sel_a is not None and sel_b is not None and sel_a.item == sel_b.item
    if (t.outcome == "success") != matched:
        problems.append(f"outcome {t.outcome} inconsistent with selections")
    return problems
