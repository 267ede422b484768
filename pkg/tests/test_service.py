import json
import os
import time

import pytest
from fastapi.testclient import TestClient

from mutualfriends.service import Service, ServiceConfig, Storage, create_app
from mutualfriends.session import load_transcripts

# NB: tests enter the TestClient context so every websocket session shares
# one event loop, as under a real server.


@pytest.fixture()
def app(schema, tmp_path):
    config = ServiceConfig(
        storage_dir=str(tmp_path / "storage"),
        scenario_seed=5,
        bot_mix={"rule": 1},
        select_throttle_ms=700,  # shortened so throttle tests stay fast
        wall_ms=60_000,
    )
    return create_app(schema, config)


@pytest.fixture()
def human_pair_app(schema, tmp_path):
    config = ServiceConfig(
        storage_dir=str(tmp_path / "storage"),
        scenario_seed=5,
        bot_mix={"human": 1},
        select_throttle_ms=700,
        wall_ms=60_000,
        abandon_grace_ms=100,
    )
    return create_app(schema, config)


def recv_until(ws, wanted, limit=80):
    """Read frames until one of the wanted types arrives."""
    seen = []
    for _ in range(limit):
        msg = json.loads(ws.receive_text())
        seen.append(msg)
        if msg["type"] in wanted:
            return msg, seen
    raise AssertionError(f"never saw {wanted}, got {[m['type'] for m in seen]}")


def join(ws):
    ws.send_text(json.dumps({"v": 1, "type": "join"}))


def send(ws, **payload):
    ws.send_text(json.dumps({"v": 1, **payload}))


def test_health(app):
    with TestClient(app) as client:
        res = client.get("/health")
        assert res.status_code == 200
        assert res.json()["status"] == "ok"


def test_join_against_bot_gets_own_kb_only(app):
    with TestClient(app) as client:
        with client.websocket_connect("/ws") as ws:
            join(ws)
            msg, _ = recv_until(ws, {"paired"})
            assert msg["v"] == 1
            assert msg["side"] in ("A", "B")
            assert msg["deadline_ms"] == 60_000
            assert len(msg["kb"]) == msg["n_items"]
            assert set(msg["kb"][0]) == set(msg["attributes"])
            service = app.state.service
            session = list(service.sessions.values())[0]
            own = session.scenario.kb(msg["side"])
            assert len(msg["kb"]) == len(own.items)


def test_bot_replies_with_typing_then_text(app):
    with TestClient(app) as client:
        with client.websocket_connect("/ws") as ws:
            join(ws)
            recv_until(ws, {"paired"})
            send(ws, type="utterance", text="hi do you have any friends at google ?")
            kinds = []
            for _ in range(40):
                msg, _ = recv_until(ws, {"partner_event"})
                kinds.append(msg["kind"])
                if msg["kind"] == "utterance":
                    break
            assert "utterance" in kinds
            assert "typing" in kinds  # pacing shows a typing indicator first
            assert kinds.index("typing") < kinds.index("utterance")


def test_selection_throttle_rejects_then_accepts(app):
    with TestClient(app) as client:
        with client.websocket_connect("/ws") as ws:
            join(ws)
            recv_until(ws, {"paired"})
            send(ws, type="select", item_index=0)
            msg, _ = recv_until(ws, {"select_ack", "select_rejected"})
            assert msg["type"] == "select_ack"
            send(ws, type="select", item_index=1)
            msg, _ = recv_until(ws, {"select_ack", "select_rejected"})
            assert msg["type"] == "select_rejected"
            assert 0 < msg["retry_after_ms"] <= 700
            time.sleep(0.75)
            send(ws, type="select", item_index=1)
            msg, _ = recv_until(ws, {"select_ack", "select_rejected"})
            assert msg["type"] == "select_ack"


def test_malformed_events_keep_session_alive(app):
    with TestClient(app) as client:
        with client.websocket_connect("/ws") as ws:
            join(ws)
            recv_until(ws, {"paired"})
            ws.send_text("{broken json")
            msg, _ = recv_until(ws, {"error"})
            assert "malformed" in msg["message"]
            send(ws, type="wiggle")
            msg, _ = recv_until(ws, {"error"})
            send(ws, type="select", item_index=999)
            msg, _ = recv_until(ws, {"error"})
            assert "item" in msg["message"]
            # the session is still usable afterwards
            send(ws, type="select", item_index=0)
            msg, _ = recv_until(ws, {"select_ack"})


def test_two_humans_pair_and_see_no_partner_kb(human_pair_app):
    with TestClient(human_pair_app) as client:
        with client.websocket_connect("/ws") as ws1:
            join(ws1)
            recv_until(ws1, {"waiting"})
            with client.websocket_connect("/ws") as ws2:
                join(ws2)
                paired2, traffic2 = recv_until(ws2, {"paired"})
                paired1, traffic1 = recv_until(ws1, {"paired"})
                assert {paired1["side"], paired2["side"]} == {"A", "B"}

                service = human_pair_app.state.service
                session = list(service.sessions.values())[0]
                kb2 = session.scenario.kb(paired2["side"])
                shared = [i.as_dict() for i in session.scenario.shared_items()]

                send(ws1, type="utterance", text="hello there")
                got, extra = recv_until(ws2, {"partner_event"})
                assert got["text"] == "hello there"
                send(ws2, type="select", item_index=0)
                recv_until(ws2, {"select_ack"})
                send(ws2, type="utterance", text="done ?")
                got, seen1 = recv_until(ws1, {"partner_event"})
                traffic1.extend(seen1)
                # selections are never relayed, and nothing sent to client 1
                # contains the partner's KB rows
                assert all(m.get("kind") != "select" for m in traffic1
                           if m["type"] == "partner_event")
                schema = service.schema
                unique2 = [i for i in kb2.items if i.as_dict() not in shared]
                raw1 = json.dumps(traffic1)
                for item in unique2:
                    row = {attr: schema.entity(item.entity_id(attr)).canonical_name
                           for attr in kb2.attrs}
                    assert json.dumps(row)[1:-1] not in raw1


def test_end_persists_transcript_and_rating(human_pair_app):
    with TestClient(human_pair_app) as client:
        service = human_pair_app.state.service
        with client.websocket_connect("/ws") as ws1:
            join(ws1)
            recv_until(ws1, {"waiting"})
            with client.websocket_connect("/ws") as ws2:
                join(ws2)
                paired2, _ = recv_until(ws2, {"paired"})
                paired1, _ = recv_until(ws1, {"paired"})
                session = list(service.sessions.values())[0]
                shared = list(session.scenario.shared_items())[0]
                for ws, paired in ((ws1, paired1), (ws2, paired2)):
                    kb = session.scenario.kb(paired["side"])
                    idx = next(i for i, item in enumerate(kb.items) if item == shared)
                    send(ws, type="select", item_index=idx)
                msg, _ = recv_until(ws1, {"end"})
                assert msg["outcome"] == "success"
                transcript_id = msg["transcript_id"]
                msg2, _ = recv_until(ws2, {"end"})
                assert msg2["outcome"] == "success"

        assert transcript_id in service.storage.transcript_ids()
        res = client.post("/ratings", json={
            "transcript_id": transcript_id, "fluency": 4, "correctness": 4,
            "cooperation": 4, "human_likeness": 4, "comment": "nice partner",
        })
        assert res.status_code == 200
        stored = os.listdir(os.path.join(service.storage.root, "ratings"))
        assert any(transcript_id in name for name in stored)
        res = client.post("/ratings", json={
            "transcript_id": transcript_id, "fluency": 6, "correctness": 4,
            "cooperation": 4, "human_likeness": 4,
        })
        assert res.status_code == 422
        res = client.get(f"/scenarios/{transcript_id}")
        assert res.status_code == 200
        assert "scenario" in res.json()
        assert client.get("/scenarios/zzz-missing").status_code == 404


def test_timeout_marks_unsuccessful_and_replays_through_metrics(schema, tmp_path):
    from mutualfriends.metrics import full_stats

    config = ServiceConfig(
        storage_dir=str(tmp_path / "storage"), scenario_seed=5,
        bot_mix={"rule": 1}, wall_ms=1_200,
    )
    app = create_app(schema, config)
    with TestClient(app) as client:
        service = app.state.service
        with client.websocket_connect("/ws") as ws:
            join(ws)
            recv_until(ws, {"paired"})
            send(ws, type="utterance", text="hi any friends that like hiking ?")
            msg, _ = recv_until(ws, {"end"}, limit=200)
            assert msg["outcome"] == "timeout"
    ids = service.storage.transcript_ids()
    path = os.path.join(service.storage.root, "transcripts", f"{ids[0]}.jsonl")
    ts = load_transcripts(path)
    stats = full_stats(ts)
    assert stats.n_dialogues == 1
    assert stats.utterance_len > 0
    assert ts[0].outcome == "timeout"


def test_storage_crash_safety(tmp_path):
    storage = Storage(str(tmp_path / "s"))
    # a leftover temp file from a crashed write is never listed as a record
    leftover = os.path.join(storage.root, "transcripts", "t1.jsonl.tmp")
    with open(leftover, "w") as f:
        f.write('{"partial":')
    assert storage.transcript_ids() == []


def test_side_assignment_uniform(schema, tmp_path):
    import numpy as np

    service = Service(schema, ServiceConfig(storage_dir=str(tmp_path / "x")))
    rng = np.random.default_rng(123)
    first_a = sum(service.assign_sides(rng)[0] == "A" for _ in range(10_000))
    assert first_a / 10_000 == pytest.approx(0.5, abs=0.02)
