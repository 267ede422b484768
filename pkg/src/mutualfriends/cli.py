"""Command-line entry point: scenario generation, self-play, training,
evaluation, analysis, terminal chat, and the live service."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .agents import AGENT_KINDS, make_agent, run_selfplay, success_rate
from .dynonet import DynoNet, ModelConfig
from .lexicon import build_lexicon
from .metrics import full_stats
from .scenario import generate_scenarios, load_scenarios, save_scenarios
from .schema import SchemaError, default_schema, load_schema
from .session import Limits, load_transcripts, save_transcripts, validate_transcript
from .util import write_json

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; we reserve 2 for data errors
        raise UsageError(message)


def _load_schema(path: str | None):
    return load_schema(path) if path else default_schema()


def _manifest(out_dir: str, command: str, args: dict, artifacts: list[str]) -> None:
    write_json(os.path.join(out_dir, "manifest.json"), {
        "tool": "mutualfriends",
        "version": __version__,
        "command": command,
        "args": args,
        "artifacts": sorted(os.path.relpath(a, out_dir) for a in artifacts),
    })


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_gen_scenarios(args) -> int:
    schema = _load_schema(args.schema)
    out = _ensure_out(args.out)
    scenarios = generate_scenarios(schema, args.n, seed=args.seed)
    path = os.path.join(out, "scenarios.jsonl")
    save_scenarios(path, scenarios)
    _manifest(out, "gen-scenarios", {"n": args.n, "seed": args.seed}, [path])
    print(f"wrote {len(scenarios)} scenarios to {path}")
    return EXIT_OK


def _load_model(path: str | None, schema, seed: int) -> DynoNet | None:
    if path is None:
        return None
    return DynoNet.load(path, schema)


def cmd_selfplay(args) -> int:
    schema = _load_schema(args.schema)
    lexicon = build_lexicon(schema)
    out = _ensure_out(args.out)
    if args.scenarios:
        scenarios = load_scenarios(args.scenarios)
        if args.n:
            scenarios = scenarios[: args.n]
    else:
        scenarios = generate_scenarios(schema, args.n or 100, seed=args.seed)

    models = {}
    for side, kind, path in (("a", args.a, args.model_a), ("b", args.b, args.model_b)):
        if kind in ("dynonet", "stanonet"):
            if path:
                models[side] = DynoNet.load(path, schema)
            else:
                # untrained model with a seeded init; vocabulary from templates
                from .training import build_vocab, perspective_examples

                probe = run_selfplay("rule", "rule", scenarios[:20], schema, lexicon,
                                     seed=args.seed)
                vocab = build_vocab(perspective_examples(probe))
                cfg = ModelConfig(seed=args.seed, dynamic_graph=(kind == "dynonet"))
                models[side] = DynoNet(schema, vocab, cfg)
        else:
            models[side] = None

    replay_source = None
    if "replay" in (args.a, args.b):
        if not args.replay_from:
            raise UsageError("--replay-from is required for replay agents")
        replay_source = load_transcripts(args.replay_from)
        if not replay_source:
            raise SchemaError(f"no transcripts in {args.replay_from}")

    limits = Limits(turn_cap=args.turn_cap)
    transcripts = run_selfplay(
        args.a, args.b, scenarios, schema, lexicon, seed=args.seed,
        model_a=models["a"], model_b=models["b"], limits=limits, jobs=args.jobs,
        replay_transcripts=replay_source, real_clock=(args.clock == "real"),
    )
    path = os.path.join(out, "transcripts.jsonl")
    save_transcripts(path, transcripts)
    rate = success_rate(transcripts)
    violations = sum(len(validate_transcript(t)) for t in transcripts)
    _manifest(out, "selfplay", {
        "a": args.a, "b": args.b, "n": len(scenarios), "seed": args.seed,
    }, [path])
    print(f"dialogues: {len(transcripts)}  success rate: {rate:.3f}  "
          f"pacing violations: {violations}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .reports import save_loss_curve
    from .training import train

    schema = _load_schema(args.schema)
    out = _ensure_out(args.out)
    transcripts = load_transcripts(args.transcripts)
    config = ModelConfig(seed=args.seed)
    if args.config:
        with open(args.config) as f:
            config = ModelConfig.from_dict(json.load(f))
    result = train(
        transcripts, schema, config,
        min_epochs=args.min_epochs, patience=args.patience, max_epochs=args.max_epochs,
        batch_size=args.batch_size, log=print,
    )
    model_path = os.path.join(out, "model.npz")
    result.model.save(model_path)
    curve = save_loss_curve(out, result.history)
    _manifest(out, "train", {"transcripts": args.transcripts, "seed": args.seed},
              [model_path] + curve)
    print(f"best dev loss: {result.best_dev:.4f}; model saved to {model_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .reports import save_stats_report, stats_table

    out = _ensure_out(args.out)
    rows = {}
    for path in args.transcripts:
        name = os.path.splitext(os.path.basename(path))[0]
        transcripts = load_transcripts(path)
        if not transcripts:
            raise SchemaError(f"no transcripts in {path}")
        rows[name] = full_stats(transcripts)
    paths = save_stats_report(out, rows)
    _manifest(out, "eval", {"inputs": args.transcripts}, paths)
    print(stats_table(rows))
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .metrics import strategy_stats
    from .reports import save_first_attr_histogram

    out = _ensure_out(args.out)
    transcripts = load_transcripts(args.transcripts)
    if not transcripts:
        raise SchemaError(f"no transcripts in {args.transcripts}")
    stats = strategy_stats(transcripts)
    paths = save_first_attr_histogram(out, stats)
    _manifest(out, "analyze", {"transcripts": args.transcripts}, paths)
    print("first-mentioned-attribute histogram:", stats.first_attr_histogram)
    print(f"wrote {paths[0]} and {paths[1]}")
    return EXIT_OK


def cmd_chat(args) -> int:
    schema = _load_schema(args.schema)
    lexicon = build_lexicon(schema)
    rng = np.random.default_rng(args.seed)
    scenarios = (load_scenarios(args.scenarios) if args.scenarios
                 else generate_scenarios(schema, 1, seed=args.seed))
    scenario = scenarios[0]
    model = _load_model(args.model, schema, args.seed)
    if args.agent in ("dynonet", "stanonet") and model is None:
        raise SchemaError(f"--model is required for agent {args.agent!r}")
    bot = make_agent(args.agent, scenario.kb_b, schema, lexicon,
                     np.random.default_rng(args.seed + 1), model=model)

    def show(kb):
        print("your friends:")
        header = "  ".join(f"{a:>18s}" for a in kb.attrs)
        print("     " + header)
        for i, item in enumerate(kb.items):
            row = "  ".join(f"{item.entity_id(a):>18s}" for a in kb.attrs)
            print(f"  {i:2d} " + row)

    show(scenario.kb_a)
    print("type text to chat, /select N to pick a friend, /quit to stop")
    script = open(args.script) if args.script else None
    selections = {"you": None, "bot": None}
    shared = list(scenario.shared_items())[0]
    try:
        for _turn in range(60):
            line = script.readline() if script else input("> ")
            if not line and script:
                break
            line = line.strip()
            if script and line:
                print(f"> {line}")
            if line == "/quit":
                break
            if line.startswith("/select"):
                idx = int(line.split()[1])
                selections["you"] = scenario.kb_a.items[idx]
                print(f"you selected friend {idx}")
            elif line:
                bot.observe(line)
            action = bot.act()
            if action is None:
                continue
            if hasattr(action, "texts"):
                if args.clock == "real":
                    import time as _time

                    from .lexicon import link_entities as _link, tokenize as _tok
                    from .session import plan_turn

                    bearing = [
                        any(l.entity is not None
                            for l in _link(_tok(t), lexicon, scenario.kb_b))
                        for t in action.texts
                    ]
                    for delay_ms, text in plan_turn(action.texts, bearing, rng):
                        _time.sleep(delay_ms / 1000.0)
                        print(f"partner: {text}")
                else:
                    for text in action.texts:
                        print(f"partner: {text}")
            else:
                selections["bot"] = scenario.kb_b.items[action.item_index]
                print("partner made a selection")
            if selections["you"] is not None and selections["you"] == selections["bot"]:
                print("you found the mutual friend!")
                break
        else:
            print("chat ended")
        if selections["you"] == shared and selections["bot"] == shared:
            print("outcome: success")
        else:
            print("outcome: failure")
    finally:
        if script:
            script.close()
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    schema = _load_schema(args.schema)
    config = ServiceConfig(
        storage_dir=args.storage,
        scenario_seed=args.seed,
        bot_mix=dict(item.split("=") for item in args.bots.split(",")) if args.bots else {"rule": "1"},
        model_path=args.model,
        static_dir=args.static,
    )
    app = create_app(schema, config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="mutualfriends",
                     description="Symmetric collaborative dialogue framework")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--schema", help="schema JSON path (default: bundled catalog)")
        p.add_argument("--out", default=out_default, help="output directory")

    p = sub.add_parser("gen-scenarios", help="sample task scenarios")
    common(p, "out/scenarios")
    p.add_argument("--n", type=int, default=100)
    p.set_defaults(fn=cmd_gen_scenarios)

    p = sub.add_parser("selfplay", help="run bot-vs-bot dialogues")
    common(p, "out/selfplay")
    p.add_argument("--a", choices=AGENT_KINDS, default="rule")
    p.add_argument("--b", choices=AGENT_KINDS, default="rule")
    p.add_argument("--n", type=int, default=None, help="number of dialogues")
    p.add_argument("--scenarios", help="scenario JSONL (default: generate)")
    p.add_argument("--model-a", help="checkpoint for agent a")
    p.add_argument("--model-b", help="checkpoint for agent b")
    p.add_argument("--replay-from", help="transcripts to replay for replay agents")
    p.add_argument("--turn-cap", type=int, default=46)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--clock", choices=["simulated", "real"], default="simulated")
    p.set_defaults(fn=cmd_selfplay)

    p = sub.add_parser("train", help="fit the neural dialogue model")
    common(p, "out/train")
    p.add_argument("--in", dest="transcripts", required=True, help="transcript JSONL")
    p.add_argument("--config", help="model config JSON")
    p.add_argument("--min-epochs", type=int, default=10)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=1)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="compute corpus statistics")
    common(p, "out/eval")
    p.add_argument("--in", dest="transcripts", required=True, nargs="+",
                   help="transcript JSONL file(s)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("analyze", help="first-mentioned-attribute histogram")
    common(p, "out/analyze")
    p.add_argument("--in", dest="transcripts", required=True)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("chat", help="interactive terminal chat against a bot")
    common(p, "out/chat")
    p.add_argument("--agent", choices=["rule", "stanonet", "dynonet"], default="rule")
    p.add_argument("--model", help="checkpoint for neural agents")
    p.add_argument("--scenarios", help="scenario JSONL (default: generate one)")
    p.add_argument("--script", help="read the human side from a file")
    p.add_argument("--clock", choices=["simulated", "real"], default="simulated")
    p.set_defaults(fn=cmd_chat)

    p = sub.add_parser("serve", help="start the live chat service")
    common(p, "out/serve")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--storage", default="out/serve/storage")
    p.add_argument("--bots", default="rule=1",
                   help="opponent mix, e.g. human=1,rule=2,dynonet=1")
    p.add_argument("--model", help="checkpoint for neural opponents")
    p.add_argument("--static", help="directory with web client assets")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, FileNotFoundError, json.JSONDecodeError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
