import json
import os

import pytest

from mutualfriends.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


def run(args):
    return main(args)


def test_usage_errors_exit_1(capsys):
    assert run(["no-such-command"]) == EXIT_USAGE
    assert run([]) == EXIT_USAGE
    assert run(["selfplay", "--a", "bogus"]) == EXIT_USAGE


def test_data_error_exit_2(tmp_path):
    missing = str(tmp_path / "nope.jsonl")
    assert run(["eval", "--in", missing, "--out", str(tmp_path / "o")]) == EXIT_DATA
    bad_schema = tmp_path / "schema.json"
    bad_schema.write_text("{broken")
    assert run(["gen-scenarios", "--n", "2", "--schema", str(bad_schema),
                "--out", str(tmp_path / "o2")]) == EXIT_DATA


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-scenarios -> selfplay -> eval -> analyze, all through the CLI."""
    root = tmp_path_factory.mktemp("pipeline")
    scen_dir = str(root / "scenarios")
    play_dir = str(root / "selfplay")
    assert run(["gen-scenarios", "--n", "12", "--seed", "7", "--out", scen_dir]) == EXIT_OK
    assert run([
        "selfplay", "--a", "rule", "--b", "rule", "--seed", "3",
        "--scenarios", os.path.join(scen_dir, "scenarios.jsonl"), "--out", play_dir,
    ]) == EXIT_OK
    return root


def test_gen_scenarios_artifacts(pipeline):
    scen = pipeline / "scenarios"
    lines = (scen / "scenarios.jsonl").read_text().strip().splitlines()
    assert len(lines) == 12
    rec = json.loads(lines[0])
    assert set(rec) == {"id", "attrs", "kbs"}
    manifest = json.loads((scen / "manifest.json").read_text())
    assert manifest["command"] == "gen-scenarios"
    assert "scenarios.jsonl" in manifest["artifacts"]


def test_selfplay_artifacts(pipeline):
    play = pipeline / "selfplay"
    assert (play / "transcripts.jsonl").exists()
    assert (play / "manifest.json").exists()
    first = json.loads((play / "transcripts.jsonl").read_text().splitlines()[0])
    assert first["kind"] == "header"
    assert first["agents"] == {"A": "rule", "B": "rule"}


def test_eval_renders_table_and_figures(pipeline, capsys):
    out = str(pipeline / "eval")
    code = run(["eval", "--in", str(pipeline / "selfplay" / "transcripts.jsonl"),
                "--out", out])
    assert code == EXIT_OK
    printed = capsys.readouterr().out
    for column in ("L_u", "H", "C_T", "C_S", "Ask", "#Ent_1", "|Attr_1|", "#Attr"):
        assert column in printed
    assert (pipeline / "eval" / "stats.json").exists()
    assert (pipeline / "eval" / "stats.txt").exists()
    assert (pipeline / "eval" / "act_shares.png").exists()


def test_analyze_writes_histogram(pipeline):
    out = str(pipeline / "analyze")
    code = run(["analyze", "--in", str(pipeline / "selfplay" / "transcripts.jsonl"),
                "--out", out])
    assert code == EXIT_OK
    csv_text = (pipeline / "analyze" / "first_attr_histogram.csv").read_text()
    assert csv_text.splitlines()[0] == "group,count"
    assert (pipeline / "analyze" / "first_attr_histogram.png").exists()


def test_train_then_replay_selfplay(pipeline, tmp_path):
    train_dir = str(pipeline / "train")
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "hidden": 10, "emb": 8, "k": 1, "relation_dim": 4, "seed": 0, "lr": 0.5,
    }))
    code = run([
        "train", "--in", str(pipeline / "selfplay" / "transcripts.jsonl"),
        "--config", str(config), "--min-epochs", "1", "--max-epochs", "1",
        "--out", train_dir,
    ])
    assert code == EXIT_OK
    assert (pipeline / "train" / "model.npz").exists()
    assert (pipeline / "train" / "loss_curve.csv").exists()
    assert (pipeline / "train" / "loss_curve.png").exists()
    # the trained checkpoint drives a neural agent in selfplay
    out = str(pipeline / "selfplay2")
    code = run([
        "selfplay", "--a", "dynonet", "--b", "rule", "--n", "3", "--seed", "5",
        "--scenarios", str(pipeline / "scenarios" / "scenarios.jsonl"),
        "--model-a", str(pipeline / "train" / "model.npz"), "--out", out,
    ])
    assert code == EXIT_OK


def test_chat_scripted(pipeline, tmp_path, capsys):
    script = tmp_path / "script.txt"
    script.write_text("hi there\ndo you have any friends at google ?\n/select 0\n/quit\n")
    code = run(["chat", "--agent", "rule", "--seed", "11",
                "--script", str(script), "--out", str(tmp_path / "chat")])
    assert code == EXIT_OK
    printed = capsys.readouterr().out
    assert "your friends:" in printed
    assert "partner:" in printed
    assert "outcome:" in printed


def test_replay_agent_reproduces_dialogue(pipeline):
    out = str(pipeline / "replayed")
    code = run([
        "selfplay", "--a", "replay", "--b", "replay", "--n", "2", "--seed", "3",
        "--scenarios", str(pipeline / "scenarios" / "scenarios.jsonl"),
        "--replay-from", str(pipeline / "selfplay" / "transcripts.jsonl"),
        "--out", out,
    ])
    assert code == EXIT_OK
    replayed = json.loads((pipeline / "replayed" / "transcripts.jsonl")
                          .read_text().splitlines()[0])
    assert replayed["outcome"] in ("success", "failure")
