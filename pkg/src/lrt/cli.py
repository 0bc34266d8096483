"""Command-line entry point: one binary, five subcommands.

    lrt gen-data --seed 1 --box-size 2 --count 2000 --clues 6-10 --out d.txt
    lrt train    --data d.txt --config train.cfg --out m.ckpt --log log.tsv
    lrt eval     --checkpoint m.ckpt --data d.txt [--metrics-out f] [--workers N]
    lrt trace    --checkpoint m.ckpt --puzzle 0102...
    lrt inspect  --checkpoint m.ckpt

Exit codes: 0 success, 1 usage error, 2 data or config error, 3 numerical
abort during training.
"""

from __future__ import annotations

import argparse
import random
import sys

from . import checkpoint as ckpt
from . import model as M
from . import sudoku as S
from . import training as T

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lrt",
        description="Adaptive-depth reasoning transformer on generated Sudoku.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a unique-solution puzzle dataset")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--box-size", type=int, default=2)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--clues", required=True,
                   help="clue target: a number ('8') or inclusive range ('6-10')")
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model and write the best checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True, help="flat key = value file")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--log", required=True, help="per-epoch log output path")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--metrics-out", default="eval_metrics.txt")
    e.add_argument("--export-traces", default=None,
                   help="also write the per-puzzle trace export here")
    e.add_argument("--workers", type=int, default=1)

    r = sub.add_parser("trace", help="print the reasoning trace for one puzzle")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--puzzle", required=True,
                   help="puzzle as digit characters, 0 for empty")

    i = sub.add_parser("inspect", help="print checkpoint header and parameters")
    i.add_argument("--checkpoint", required=True)
    return ap


def _parse_clues(text: str):
    lo, sep, hi = text.partition("-")
    try:
        if sep:
            lo, hi = int(lo), int(hi)
        else:
            lo = hi = int(lo)
    except ValueError:
        raise ValueError(f"bad --clues value {text!r}: use '8' or '6-10'") from None
    if lo > hi:
        raise ValueError(f"bad --clues range {text!r}: low end exceeds high end")
    return lo, hi


def cmd_gen_data(args) -> int:
    lo, hi = _parse_clues(args.clues)
    base = random.Random(args.seed)
    pairs = []
    for _ in range(args.count):
        target = base.randint(lo, hi)
        pairs.append(S.generate_puzzle(base.getrandbits(32), args.box_size, target))
    S.write_dataset(pairs, args.out, box_size=args.box_size)
    hist = S.clue_histogram(pairs)
    print(f"wrote {len(pairs)} puzzles (box_size {args.box_size}) to {args.out}")
    print("clue counts: " + ", ".join(f"{k}: {v}" for k, v in hist.items()))
    return EXIT_OK


def cmd_train(args) -> int:
    pairs = S.read_dataset(args.data)
    if not pairs:
        raise S.DatasetError(f"{args.data} holds no puzzles")
    values = T.parse_config_file(args.config)
    config = T.build_train_config(values,
                                  default_box_size=pairs[0].puzzle.box_size)
    params, log_lines = T.train(pairs, config)
    ckpt.save_checkpoint(params, args.out)
    with open(args.log, "w", encoding="ascii") as fh:
        fh.write("\n".join(log_lines) + "\n")
    print(f"trained {config.epochs} epochs on {len(pairs)} puzzles")
    print(f"checkpoint: {args.out}")
    print(f"log: {args.log}")
    print(log_lines[0])
    print(log_lines[-1])
    return EXIT_OK


def cmd_eval(args) -> int:
    params = ckpt.load_checkpoint(args.checkpoint)
    pairs = S.read_dataset(args.data)
    if not pairs:
        raise S.DatasetError(f"{args.data} holds no puzzles")
    data_box = pairs[0].puzzle.box_size
    if params.config.box_size != data_box:
        raise ValueError(
            f"checkpoint box_size {params.config.box_size} != dataset "
            f"box_size {data_box}"
        )
    metrics = T.evaluate(params, pairs, params.config,
                         workers=max(1, args.workers),
                         export_path=args.export_traces)
    lines = metrics.as_lines()
    for line in lines:
        print(line)
    divergence = T.train_infer_divergence(params, pairs)
    print(f"# train_infer_divergence = {divergence:.6g}")
    with open(args.metrics_out, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"# metrics written to {args.metrics_out}")
    if args.export_traces:
        print(f"# traces written to {args.export_traces}")
    return EXIT_OK


def cmd_trace(args) -> int:
    params = ckpt.load_checkpoint(args.checkpoint)
    n = params.config.box_size
    grid = S.Grid.from_string(args.puzzle, n)
    pred, trace = M.predict(grid, params)
    print(M.format_trace(trace))
    print(f"steps_taken\t{trace.steps_taken}")
    print(f"discard_events\t{trace.discard_event_count}")
    print(f"prediction\t{pred.to_string()}")
    solutions = S.solve_brute_force(grid, 2)
    if not solutions:
        print("oracle\tunsatisfiable")
    elif len(solutions) > 1:
        print("oracle\tmultiple solutions")
        print(f"matches_oracle\t{int(pred in solutions)}")
    else:
        print(f"solution\t{solutions[0].to_string()}")
        print(f"matches_oracle\t{int(pred == solutions[0])}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    info = ckpt.inspect_checkpoint(args.checkpoint)
    print(f"magic\t{info['magic']}")
    for key in ("box_size", "d_model", "n_layers", "n_heads", "t_max"):
        print(f"{key}\t{info[key]}")
    print("parameters:")
    for name, shape, count in info["parameters"]:
        dims = "x".join(str(d) for d in shape) if shape else "scalar"
        print(f"  {name}\t{dims}\t{count}")
    print(f"total_scalars\t{info['total_scalars']}")
    return EXIT_OK


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "trace": cmd_trace,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage problems; fold the latter
        # into our usage code
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return _HANDLERS[args.command](args)
    except T.TrainingAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (S.DatasetError, T.ConfigError, ckpt.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
