"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _load_json(path) -> dict:
    try:
        return json.loads(_existing(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from None


def _examples(dataset):
    from .data import prepare_examples, read_matches

    matches = read_matches(_existing(dataset))
    for m in matches:
        m.validate(require_events=False)
    ex = prepare_examples(matches)
    return [m.match_id for m, _, _ in ex], [(x, y) for _, x, y in ex]


def _model_config(path, overrides: dict):
    from .model import ModelConfig

    d = _load_json(path) if path else {}
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig.from_dict(d)


def _train_config(path, overrides: dict):
    from .training import TrainConfig

    d = _load_json(path) if path else {}
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(d)


# -- subcommands --------------------------------------------------------------


def cmd_generate(args) -> int:
    from .data import League, LeagueParams, generate_dataset, write_matches

    params = LeagueParams(**_load_json(args.params)) if args.params else LeagueParams()
    if args.matches < 0:
        raise UsageError("--matches must be non-negative")
    matches = generate_dataset(args.matches, args.seed, League(params))
    n = write_matches(args.out, matches)
    print(f"wrote {n} matches to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .metrics import ablation_config
    from .model import save_checkpoint
    from .training import train, write_history

    model_cfg = _model_config(args.model_config, {"seed": args.model_seed})
    if args.ablation:
        model_cfg = ablation_config(model_cfg, args.ablation)
    train_cfg = _train_config(args.train_config, {
        "lr": args.lr, "steps": args.steps, "batch_size": args.batch_size, "seed": args.seed,
    })
    ids, examples = _examples(args.dataset)
    if not examples:
        raise ValueError("dataset is empty")
    result = train(examples, model_cfg, train_cfg, ids)
    save_checkpoint(result.model, args.out, {"step": result.best_step, "val_loss": result.best_val,
                                             "train_config": train_cfg.to_dict()})
    history = args.history or str(Path(args.out).with_suffix(".history.csv"))
    write_history(result.history, history)
    print(f"best validation loss {result.best_val:.4f} at step {result.best_step}; "
          f"checkpoint {args.out}; history {history}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .metrics import evaluate
    from .model import load_checkpoint

    model, _ = load_checkpoint(_existing(args.ckpt))
    _, examples = _examples(args.dataset)
    if not examples:
        raise ValueError("dataset is empty")
    ev = evaluate(model, examples, bins=args.bins)
    ev.write(args.out)
    print(f"evaluated {ev.matches} matches; metrics in {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .metrics import ablation_suite

    base = _model_config(args.base_config, {})
    train_cfg = _train_config(args.train_config, {"steps": args.steps, "seed": args.seed})
    ids, examples = _examples(args.dataset)
    if not examples:
        raise ValueError("dataset is empty")
    run = ablation_suite(examples, base, train_cfg, ids)
    run.table.write(args.out)
    print(f"ablation grid {run.table.shape} written to {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import equivalence_suite, gradient_check

    eq = equivalence_suite(args.cases, args.seed)
    print(f"equivalence: {eq.passed}/{len(eq.cases)} cases passed, max error {eq.max_error:.3e}, "
          f"{eq.seconds:.2f}s")
    ok = eq.ok
    if not args.skip_gradients:
        gr = gradient_check(args.seed, fraction=args.grad_fraction)
        print(f"gradients: max relative error {gr.max_error:.3e} over {len(gr.errors)} tensors, {gr.seconds:.2f}s")
        ok = ok and gr.ok
    print("verify: " + ("PASS" if ok else "FAIL"))
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_bench(args) -> int:
    from .bench import bench, format_table

    try:
        sizes = [int(s) for s in args.sizes.split(",") if s]
    except ValueError:
        raise UsageError(f"--sizes expects a comma-separated list of integers, got {args.sizes!r}") from None
    table = format_table(bench(sizes, dim=args.dim, repeats=args.repeats))
    print(table)
    if args.out:
        Path(args.out).write_text(table + "\n")
    return EXIT_OK


def cmd_replay(args) -> int:
    from .data import StrengthTracker, read_matches
    from .model import load_checkpoint
    from .stream import FileSink, replay

    ckpt = _existing(args.ckpt)
    model, _ = load_checkpoint(ckpt)
    version = hashlib.sha256(ckpt.read_bytes()).hexdigest()[:12]
    tracker = StrengthTracker()
    if args.history:
        for m in sorted(read_matches(_existing(args.history)), key=lambda m: (m.kickoff, m.match_id)):
            tracker.update(m)
    matches = read_matches(_existing(args.match))
    sink = FileSink(args.out)
    try:
        for m in sorted(matches, key=lambda m: (m.kickoff, m.match_id)):
            m.validate(require_events=False)
            result = replay(model, m, tracker.store_for(m), sink, model_version=version)
            tracker.update(m)
            s = result.stats
            print(f"{m.match_id}: {len(result.messages)} messages, latency p50 {s['p50']:.4f}s "
                  f"p95 {s['p95']:.4f}s max {s['max']:.4f}s")
    finally:
        sink.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="axialcast", description="Axial transformer forecasts for football matches.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic match dataset")
    g.add_argument("--params", help="league parameter JSON file")
    g.add_argument("--matches", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    t.add_argument("--dataset", required=True)
    t.add_argument("--model-config")
    t.add_argument("--train-config")
    t.add_argument("--out", required=True)
    t.add_argument("--history", help="CSV path for the metrics history")
    t.add_argument("--ablation", choices=["ours", "w/o agent", "w/o temporal", "w/o pre-game", "w/ stacked"])
    t.add_argument("--lr", type=float)
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--model-seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="log-probability and calibration CSVs")
    e.add_argument("--dataset", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--bins", type=int, default=20)
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("ablate", help="train and score all five model variants")
    a.add_argument("--dataset", required=True)
    a.add_argument("--base-config")
    a.add_argument("--train-config")
    a.add_argument("--steps", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    v = sub.add_parser("verify", help="axial vs sequential equivalence and gradient checks")
    v.add_argument("--cases", type=int, default=200)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--grad-fraction", type=float, default=1.0)
    v.add_argument("--skip-gradients", action="store_true")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="axial vs sequential attention timings")
    b.add_argument("--sizes", default="8,16,32,64")
    b.add_argument("--dim", type=int, default=16)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("replay", help="stream recorded matches through the live engine")
    r.add_argument("--match", required=True, help="dataset file with the match(es) to replay")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--out", required=True, help="JSON-lines message file")
    r.add_argument("--history", help="earlier matches used for pre-game strength")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    from .data import DatasetError, RecordError

    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, RecordError, ValueError, KeyError, TypeError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
