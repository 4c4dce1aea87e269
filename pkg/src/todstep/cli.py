"""Command-line entry points.

Subcommands: gen-corpus, sft, rl-train, evaluate, reward-trace, serve.
All structured output is JSON (one object per line where streaming).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .envgen import (
    GenConfig,
    build_database,
    generate_corpus,
    load_corpus,
    toy_schema,
    write_corpus,
)
from .errors import TodstepError
from .metrics import DialogueEval, evaluate_corpus
from .policy import load_snapshot, save_snapshot, sft_train
from .reward import RewardConfig, RewardTracker
from .schema import (
    EntityDatabase,
    derive_turn_goal,
    load_database,
    load_schema,
)
from .service import RewardService, serve_stdio, serve_tcp
from .trainer import TrainConfig, save_checkpoint, train

REWARD_MODE_FLAGS = {
    "full": "full",
    "no-ru": "generation_only",
    "no-rg": "understanding_only",
    "sparse": "sparse_terminal",
}


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _read_text(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _load_schema_arg(path: str | None):
    if path is None:
        return toy_schema()
    return load_schema(_read_text(path))


def _load_db_args(schema_path: str | None, db_path: str | None) -> EntityDatabase:
    schema = _load_schema_arg(schema_path)
    if db_path is None:
        return build_database(schema)
    return load_database(_read_text(db_path), schema)


def cmd_gen_corpus(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    config = GenConfig.from_dict(raw)
    schema = _load_schema_arg(args.schema)
    if args.no_acts:
        schema = dataclasses.replace(schema, has_dialogue_acts=False)
    db = build_database(
        schema, entities_per_domain=config.entities_per_domain, seed=config.seed
    )
    corpus = generate_corpus(config, schema, db)
    write_corpus(corpus, args.out, schema, db, config=config)
    print(json.dumps({
        "out": str(args.out),
        "train": len(corpus.train),
        "dev": len(corpus.dev),
        "test": len(corpus.test),
    }, sort_keys=True))
    return 0


def cmd_sft(args) -> int:
    schema, _, corpus = load_corpus(args.corpus)
    snapshot, losses = sft_train(
        corpus.train, schema,
        epochs=args.epochs, learning_rate=args.lr,
        bits=args.bits, max_output=args.max_output,
    )
    save_snapshot(snapshot, args.out)
    print(json.dumps({
        "out": str(args.out),
        "epochs": args.epochs,
        "final_nll": losses[-1] if losses else None,
    }, sort_keys=True))
    return 0


def cmd_rl_train(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    reward_raw = raw.pop("reward", {})
    config = TrainConfig.from_dict(raw)
    if args.reward_mode is not None:
        config = TrainConfig.from_dict(
            {**config.to_dict(), "reward_mode": REWARD_MODE_FLAGS[args.reward_mode]}
        )
    if args.nlpo:
        config = TrainConfig.from_dict({**config.to_dict(), "nlpo": True})
    if args.seed is not None:
        config = TrainConfig.from_dict({**config.to_dict(), "seed": args.seed})
    reward_config = RewardConfig(**reward_raw)
    schema, db, corpus = load_corpus(args.corpus)
    snapshot = load_snapshot(args.snapshot)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "metrics.jsonl"
    with open(log_path, "w", encoding="utf-8") as log_file:
        def sink(record: dict) -> None:
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            log_file.flush()

        result = train(
            config, corpus, db, snapshot,
            reward_config=reward_config, log_sink=sink,
        )
    save_snapshot(result.snapshot, out_dir / "snapshot.npz")
    save_checkpoint(result.state, out_dir / "checkpoint.npz")
    final = result.logs[-1] if result.logs else {}
    print(json.dumps({
        "out": str(out_dir),
        "episodes": config.episodes,
        "combined": final.get("combined"),
    }, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    db = _load_db_args(args.schema, args.db)
    corpus = []
    with open(args.predictions, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                corpus.append(DialogueEval.from_dict(json.loads(line)))
    report = evaluate_corpus(corpus, db, mode=args.mode)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_reward_trace(args) -> int:
    schema = _load_schema_arg(args.schema)
    turn = json.loads(args.turn)
    goal = derive_turn_goal(turn, schema)
    if args.tokens == "-":
        text = sys.stdin.read()
    else:
        with open(args.tokens, "r", encoding="utf-8") as fh:
            text = fh.read()
    tokens = text.split()
    config = RewardConfig(alpha_u=args.alpha_u, alpha_g=args.alpha_g)
    tracker = RewardTracker(goal, schema, config)
    for token in tokens:
        record = tracker.step(token)
        print(json.dumps(record.to_dict(), sort_keys=True))
    summary = tracker.finalize()
    print(json.dumps({
        "cum_u": summary.cum_u,
        "cum_g": summary.cum_g,
        "cum_tod": summary.cum_tod,
        "n_tokens": summary.n_tokens,
        "malformed": summary.malformed,
        "halted": summary.halted,
        "sv_hat": [list(t) for t in sorted(summary.sv_hat)],
        "s_hat": [list(p) for p in sorted(summary.s_hat)],
    }, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    db = _load_db_args(args.schema, args.db)
    service = RewardService(db, idle_timeout=args.idle_timeout)
    if args.stdio:
        serve_stdio(service)
        return 0

    def announce(address):
        print(json.dumps({"listening": address[1]}), flush=True)

    serve_tcp(service, port=args.port, announce=announce)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="todstep",
        description="Token-level task rewards and RL training for dialogue generation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic dialogue corpus")
    p.add_argument("--config", help="JSON file of generator settings")
    p.add_argument("--schema", help="schema JSON (default: bundled toy schema)")
    p.add_argument("--no-acts", action="store_true",
                   help="drop the dialogue-act stage from the schema")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("sft", help="supervised fine-tuning on a corpus")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="snapshot output path (.npz)")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--bits", type=int, default=18)
    p.add_argument("--max-output", type=int, default=64)
    p.set_defaults(func=cmd_sft)

    p = sub.add_parser("rl-train", help="reinforcement fine-tuning from a snapshot")
    p.add_argument("--config", help="JSON file of training settings")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--snapshot", required=True, help="starting snapshot (.npz)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--reward-mode", choices=sorted(REWARD_MODE_FLAGS))
    p.add_argument("--nlpo", action="store_true",
                   help="masked-policy action elimination during sampling")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_rl_train)

    p = sub.add_parser("evaluate", help="score a predictions file")
    p.add_argument("--predictions", required=True, help="JSONL of dialogue evals")
    p.add_argument("--schema", help="schema JSON (default: bundled toy schema)")
    p.add_argument("--db", help="entity database JSON (default: derived)")
    p.add_argument("--mode", choices=["multiwoz", "incar"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reward-trace", help="per-token reward trace for one turn")
    p.add_argument("--turn", required=True, help="JSON object of the annotated turn")
    p.add_argument("--tokens", required=True, help="token file, or - for stdin")
    p.add_argument("--schema", help="schema JSON (default: bundled toy schema)")
    p.add_argument("--alpha-u", type=float, default=1.0)
    p.add_argument("--alpha-g", type=float, default=1.0)
    p.set_defaults(func=cmd_reward_trace)

    p = sub.add_parser("serve", help="run the reward service")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--stdio", action="store_true", help="serve over stdio")
    group.add_argument("--port", type=int, help="serve over TCP (0 = auto)")
    p.add_argument("--schema", help="schema JSON (default: bundled toy schema)")
    p.add_argument("--db", help="entity database JSON (default: derived)")
    p.add_argument("--idle-timeout", type=float, default=600.0,
                   help="seconds before idle sessions expire")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TodstepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
