"""Live chat service: visitors join over a websocket, get paired with a
human or a configured bot on a fresh scenario, and play under the real
clock with the same pacing and throttle rules as simulated sessions.

Wire protocol (v:1): one JSON object per websocket message.
  client -> server: {"v":1,"type":"join"}
                    {"v":1,"type":"utterance","text":str}
                    {"v":1,"type":"typing"}
                    {"v":1,"type":"select","item_index":int}
                    {"v":1,"type":"rate","fluency":1-5,...,"comment":str?}
  server -> client: {"v":1,"type":"joined","token":str}
                    {"v":1,"type":"waiting"}
                    {"v":1,"type":"paired","session_id","side","attributes",
                     "kb":[{attr:value,...}],"n_items","deadline_ms"}
                    {"v":1,"type":"partner_event","kind":"utterance"|"typing","text"?}
                    {"v":1,"type":"select_ack","item_index"}
                    {"v":1,"type":"select_rejected","retry_after_ms"}
                    {"v":1,"type":"end","outcome","transcript_id"}
                    {"v":1,"type":"error","message"}

A client only ever sees its own KB; selections are never relayed to the
partner. Ended sessions are persisted as transcript JSONL plus optional
rating records, written atomically.
"""

from __future__ import annotations

import asyncio
import json
import os
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from .agents import make_agent
from .dynonet import DynoNet
from .lexicon import Lexicon, build_lexicon, classify_utterance, link_entities, tokenize
from .scenario import Scenario, generate_scenario
from .schema import Schema
from .session import (
    Event,
    SelectAction,
    Transcript,
    Utter,
    handle_selection,
    plan_turn,
)
from .util import make_rng

PROTOCOL_VERSION = 1
RATING_FIELDS = ("fluency", "correctness", "cooperation", "human_likeness")


@dataclass
class ServiceConfig:
    storage_dir: str = "storage"
    scenario_seed: int = 0
    bot_mix: dict[str, str | float] = field(default_factory=lambda: {"rule": 1})
    model_path: str | None = None
    static_dir: str | None = None
    wall_ms: int = 300_000
    select_throttle_ms: int = 10_000
    abandon_grace_ms: int = 30_000
    idle_bot_nudge_ms: int = 10_000


class Storage:
    """Append-only transcript and rating store; every record is written to
    a temp file first and renamed into place."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(os.path.join(root, "transcripts"), exist_ok=True)
        os.makedirs(os.path.join(root, "ratings"), exist_ok=True)

    def save_transcript(self, transcript: Transcript) -> str:
        path = os.path.join(self.root, "transcripts", f"{transcript.id}.jsonl")
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            for line in transcript.to_lines():
                f.write(line + "\n")
        os.replace(tmp, path)
        return transcript.id

    def save_rating(self, transcript_id: str, rating: dict) -> str:
        rid = uuid.uuid4().hex[:12]
        path = os.path.join(self.root, "ratings", f"{transcript_id}-{rid}.json")
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump({"transcript_id": transcript_id, **rating}, f)
        os.replace(tmp, path)
        return path

    def transcript_ids(self) -> list[str]:
        names = os.listdir(os.path.join(self.root, "transcripts"))
        return sorted(n[:-6] for n in names if n.endswith(".jsonl"))

    def load_scenario(self, transcript_id: str) -> dict | None:
        path = os.path.join(self.root, "transcripts", f"{transcript_id}.jsonl")
        if not os.path.exists(path):
            return None
        with open(path, encoding="utf-8") as f:
            header = json.loads(f.readline())
        return header.get("scenario")


class HumanConn:
    def __init__(self, ws: WebSocket, token: str):
        self.ws = ws
        self.token = token
        self.session: "LiveSession | None" = None

    async def send(self, payload: dict) -> None:
        try:
            await self.ws.send_text(json.dumps({"v": PROTOCOL_VERSION, **payload}))
        except Exception:
            pass  # peer gone; the disconnect handler will clean up


class LiveSession:
    def __init__(self, service: "Service", scenario: Scenario,
                 humans: dict[str, HumanConn], bot_kind: str | None,
                 bot_side: str | None, rng: np.random.Generator):
        self.service = service
        self.scenario = scenario
        self.humans = humans
        self.bot_kind = bot_kind
        self.bot_side = bot_side
        self.rng = rng
        self.id = f"s{uuid.uuid4().hex[:12]}"
        self.started = time.monotonic()
        self.events: list[Event] = []
        self.turns = 0
        self.last_select_ms: dict[str, int | None] = {"A": None, "B": None}
        self.final_choice: dict[str, Event | None] = {"A": None, "B": None}
        self.ended = False
        self.outcome = "failure"
        self.lock = asyncio.Lock()
        self.tasks: list[asyncio.Task] = []
        self._bot_busy = False
        self.bot = None
        if bot_kind is not None:
            self.bot = make_agent(
                bot_kind, scenario.kb(bot_side), service.schema, service.lexicon,
                rng=np.random.default_rng(int(rng.integers(0, 2**63))),
                model=service.model if bot_kind in ("dynonet", "stanonet") else None,
            )

    # -- helpers -------------------------------------------------------------

    def now_ms(self) -> int:
        return int((time.monotonic() - self.started) * 1000)

    def other(self, side: str) -> str:
        return "B" if side == "A" else "A"

    def agent_names(self) -> dict[str, str]:
        names = {}
        for side in ("A", "B"):
            names[side] = self.bot_kind if side == self.bot_side else "human"
        return names

    def paired_payload(self, side: str) -> dict:
        kb = self.scenario.kb(side)
        display = [
            {attr: self.service.schema.entity(item.entity_id(attr)).canonical_name
             for attr in kb.attrs}
            for item in kb.items
        ]
        return {
            "type": "paired", "session_id": self.id, "side": side,
            "attributes": list(kb.attrs), "kb": display, "n_items": len(kb.items),
            "deadline_ms": self.service.config.wall_ms,
        }

    def log_utterance(self, side: str, text: str) -> None:
        toks = tokenize(text)
        links = link_entities(toks, self.service.lexicon, self.scenario.kb(side))
        acts = sorted(a.value for a in classify_utterance(toks, links))
        self.events.append(Event(
            time_ms=self.now_ms(), agent=side, kind="utterance", text=text,
            tokens=toks,
            links=[{"span": l.span, "entity": l.entity.id if l.entity else None,
                    "in_kb": l.in_kb} for l in links],
            acts=acts, turn=self.turns,
        ))

    # -- lifecycle -------------------------------------------------------------

    async def start(self) -> None:
        for side, conn in self.humans.items():
            await conn.send(self.paired_payload(side))
        loop = asyncio.get_running_loop()
        self.tasks.append(loop.create_task(self._deadline_task()))
        if self.bot is not None:
            self.tasks.append(loop.create_task(self._bot_turn()))
            self.tasks.append(loop.create_task(self._idle_nudge_task()))

    async def _deadline_task(self) -> None:
        await asyncio.sleep(self.service.config.wall_ms / 1000.0)
        async with self.lock:
            if not self.ended:
                await self._end("timeout")

    async def _idle_nudge_task(self) -> None:
        interval = self.service.config.idle_bot_nudge_ms / 1000.0
        while not self.ended:
            await asyncio.sleep(interval)
            self.nudge_bot()

    async def client_event(self, side: str, msg: dict) -> None:
        async with self.lock:
            if self.ended:
                return
            kind = msg.get("type")
            if kind == "utterance":
                text = str(msg.get("text", "")).strip()
                if not text:
                    return
                self.turns += 1
                self.log_utterance(side, text)
                await self._forward(side, {"type": "partner_event",
                                           "kind": "utterance", "text": text})
                if self.bot is not None and side != self.bot_side:
                    self.bot.observe(text)
            elif kind == "typing":
                self.events.append(Event(time_ms=self.now_ms(), agent=side,
                                         kind="typing", turn=self.turns))
                await self._forward(side, {"type": "partner_event", "kind": "typing"})
            elif kind == "select":
                await self._selection(side, msg)
            elif kind == "rate":
                self._store_rating(msg)
            else:
                await self._send(side, {"type": "error",
                                        "message": f"unknown event {kind!r}"})
        if self.bot is not None and msg.get("type") == "utterance":
            self.nudge_bot()

    def nudge_bot(self) -> None:
        """Schedule a bot activation off the caller's coroutine; overlapping
        activations collapse into one."""
        if self.ended or self.bot is None or self._bot_busy:
            return

        async def run():
            self._bot_busy = True
            try:
                await self._bot_turn()
            finally:
                self._bot_busy = False

        self.tasks.append(asyncio.get_running_loop().create_task(run()))

    async def _selection(self, side: str, msg: dict) -> None:
        kb = self.scenario.kb(side)
        try:
            index = int(msg.get("item_index"))
        except (TypeError, ValueError):
            await self._send(side, {"type": "error", "message": "bad item_index"})
            return
        try:
            verdict, retry = handle_selection(
                self.last_select_ms[side], self.now_ms(), kb, index,
                self.service.config.select_throttle_ms)
        except IndexError:
            await self._send(side, {"type": "error", "message": "item not in KB"})
            return
        if verdict == "throttled":
            await self._send(side, {"type": "select_rejected", "retry_after_ms": retry})
            return
        self.turns += 1
        ev = Event(time_ms=self.now_ms(), agent=side, kind="select",
                   item_index=index, item=kb.items[index].as_dict(), turn=self.turns)
        self.events.append(ev)
        self.last_select_ms[side] = self.now_ms()
        self.final_choice[side] = ev
        await self._send(side, {"type": "select_ack", "item_index": index})
        a, b = self.final_choice["A"], self.final_choice["B"]
        if a is not None and b is not None and a.item == b.item:
            await self._end("success")

    async def _bot_turn(self) -> None:
        async with self.lock:
            if self.ended or self.bot is None:
                return
            action = self.bot.act()
            side = self.bot_side
            if isinstance(action, SelectAction):
                verdict, _ = handle_selection(
                    self.last_select_ms[side], self.now_ms(),
                    self.scenario.kb(side), action.item_index,
                    self.service.config.select_throttle_ms)
                feedback = getattr(self.bot, "on_select_result", None)
                if feedback:
                    feedback(verdict == "accepted", action.item_index)
                if verdict == "accepted":
                    self.turns += 1
                    kb = self.scenario.kb(side)
                    ev = Event(time_ms=self.now_ms(), agent=side, kind="select",
                               item_index=action.item_index,
                               item=kb.items[action.item_index].as_dict(),
                               turn=self.turns)
                    self.events.append(ev)
                    self.last_select_ms[side] = self.now_ms()
                    self.final_choice[side] = ev
                    a, b = self.final_choice["A"], self.final_choice["B"]
                    if a is not None and b is not None and a.item == b.item:
                        await self._end("success")
                return
            if not isinstance(action, Utter) or not action.texts:
                return
            linked = [link_entities(tokenize(t), self.service.lexicon,
                                    self.scenario.kb(side)) for t in action.texts]
            bearing = [any(l.entity is not None for l in ls) for ls in linked]
            plan = plan_turn(action.texts, bearing, self.rng)
            self.turns += 1
        for delay_ms, text in plan:
            await self._forward_from_bot({"type": "partner_event", "kind": "typing"})
            await asyncio.sleep(delay_ms / 1000.0)
            async with self.lock:
                if self.ended:
                    return
                self.events.append(Event(time_ms=self.now_ms(), agent=self.bot_side,
                                         kind="typing", turn=self.turns))
                self.log_utterance(self.bot_side, text)
            await self._forward_from_bot({"type": "partner_event",
                                          "kind": "utterance", "text": text})

    async def _send(self, side: str, payload: dict) -> None:
        conn = self.humans.get(side)
        if conn is not None:
            await conn.send(payload)

    async def _forward(self, from_side: str, payload: dict) -> None:
        target = self.humans.get(self.other(from_side))
        if target is not None:
            await target.send(payload)

    async def _forward_from_bot(self, payload: dict) -> None:
        target = self.humans.get(self.other(self.bot_side))
        if target is not None:
            await target.send(payload)

    def _store_rating(self, msg: dict) -> None:
        rating = {k: msg.get(k) for k in RATING_FIELDS}
        if all(isinstance(v, int) and 1 <= v <= 5 for v in rating.values()):
            rating["comment"] = str(msg.get("comment", ""))
            self.service.storage.save_rating(self.id, rating)

    async def disconnect(self, side: str) -> None:
        """A human left; after the grace period the dialogue is abandoned."""
        grace = self.service.config.abandon_grace_ms / 1000.0
        if all(s in self.humans for s in ("A", "B")) and not self.ended:
            await asyncio.sleep(grace)
        async with self.lock:
            if not self.ended:
                await self._end("failure")

    async def _end(self, outcome: str) -> None:
        if self.ended:
            return
        self.ended = True
        self.outcome = outcome
        transcript = Transcript(
            id=self.id, scenario=self.scenario, agents=self.agent_names(),
            outcome=outcome, events=self.events, turns=self.turns,
        )
        self.service.storage.save_transcript(transcript)
        for conn in self.humans.values():
            await conn.send({"type": "end", "outcome": outcome,
                             "transcript_id": self.id})
        for task in self.tasks:
            if task is not asyncio.current_task():
                task.cancel()


class Service:
    def __init__(self, schema: Schema, config: ServiceConfig):
        self.schema = schema
        self.config = config
        self.lexicon: Lexicon = build_lexicon(schema)
        self.storage = Storage(config.storage_dir)
        self.rng = make_rng(config.scenario_seed)
        self.waiting: list[HumanConn] = []
        self.sessions: dict[str, LiveSession] = {}
        self.lobby_lock = asyncio.Lock()
        self.model: DynoNet | None = None
        if config.model_path:
            self.model = DynoNet.load(config.model_path, schema)

    def _draw_opponent(self) -> str:
        kinds = list(self.config.bot_mix.keys())
        weights = np.array([float(v) for v in self.config.bot_mix.values()])
        if weights.sum() <= 0:
            return "rule"
        return str(kinds[int(self.rng.choice(len(kinds), p=weights / weights.sum()))])

    def assign_sides(self, rng: np.random.Generator) -> tuple[str, str]:
        """Random KB side assignment for (first, second) participant."""
        return ("A", "B") if rng.random() < 0.5 else ("B", "A")

    async def join(self, conn: HumanConn) -> None:
        async with self.lobby_lock:
            if conn.session is not None or conn in self.waiting:
                await conn.send({"type": "error", "message": "duplicate join"})
                return
            await conn.send({"type": "joined", "token": conn.token})
            opponent = self._draw_opponent()
            if opponent == "human":
                if self.waiting:
                    other = self.waiting.pop(0)
                    await self._create_session({conn: None, other: None}, None)
                else:
                    self.waiting.append(conn)
                    await conn.send({"type": "waiting"})
                return
            await self._create_session({conn: None}, opponent)

    async def _create_session(self, humans: dict[HumanConn, None],
                              bot_kind: str | None) -> None:
        scenario = generate_scenario(self.schema, self.rng)
        rng = np.random.default_rng(int(self.rng.integers(0, 2**63)))
        conns = list(humans.keys())
        first, second = self.assign_sides(rng)
        mapping: dict[str, HumanConn] = {first: conns[0]}
        bot_side = None
        if bot_kind is None:
            mapping[second] = conns[1]
        else:
            bot_side = second
        session = LiveSession(self, scenario, mapping, bot_kind, bot_side, rng)
        for conn in conns:
            conn.session = session
        self.sessions[session.id] = session
        await session.start()

    async def handle_disconnect(self, conn: HumanConn) -> None:
        async with self.lobby_lock:
            if conn in self.waiting:
                self.waiting.remove(conn)
                return
        session = conn.session
        if session is not None:
            side = next((s for s, c in session.humans.items() if c is conn), None)
            if side is not None:
                await session.disconnect(side)


def create_app(schema: Schema, config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="mutualfriends chat service")
    service = Service(schema, config)
    app.state.service = service

    @app.get("/health")
    async def health():
        return {"status": "ok", "sessions": len(service.sessions),
                "waiting": len(service.waiting)}

    @app.get("/scenarios/{transcript_id}")
    async def scenario_view(transcript_id: str):
        live = service.sessions.get(transcript_id)
        if live is not None:
            return {"scenario": live.scenario.to_dict(), "live": not live.ended}
        stored = service.storage.load_scenario(transcript_id)
        if stored is None:
            return JSONResponse({"error": "unknown id"}, status_code=404)
        return {"scenario": stored, "live": False}

    @app.post("/ratings")
    async def post_rating(payload: dict):
        transcript_id = payload.get("transcript_id")
        rating = {k: payload.get(k) for k in RATING_FIELDS}
        if not transcript_id:
            return JSONResponse({"error": "transcript_id required"}, status_code=422)
        if not all(isinstance(v, int) and 1 <= v <= 5 for v in rating.values()):
            return JSONResponse({"error": "ratings must be integers in 1..5"},
                                status_code=422)
        rating["comment"] = str(payload.get("comment", ""))
        path = service.storage.save_rating(str(transcript_id), rating)
        return {"stored": os.path.basename(path)}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        conn = HumanConn(ws, token=uuid.uuid4().hex[:16])
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await conn.send({"type": "error", "message": "malformed JSON"})
                    continue
                if msg.get("type") == "join":
                    await service.join(conn)
                elif conn.session is not None:
                    side = next((s for s, c in conn.session.humans.items() if c is conn), None)
                    if side is not None:
                        await conn.session.client_event(side, msg)
                else:
                    await conn.send({"type": "error", "message": "join first"})
        except WebSocketDisconnect:
            await service.handle_disconnect(conn)

    static_dir = config.static_dir
    if static_dir and os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="static")
    else:
        @app.get("/")
        async def index():
            return {"service": "mutualfriends", "hint": "connect via /ws",
                    "webui": "not installed"}

    return app
