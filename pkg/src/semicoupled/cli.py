"""Command line entry points.

    semicoupled run <config.json> [--resume]
    semicoupled eval <checkpoint.bin> <config.json>
    semicoupled analyze-chains --depth N --length T --p P [P ...] [--out DIR]
    semicoupled export-dataset <task> <out_dir> [--count N] [--seed S] [--t-steps T]

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures during training, 1 for anything else the library rejects.
"""

from __future__ import annotations

import argparse
import sys

from . import chains, tasks
from .errors import NumericError, SemiCoupledError
from .errors import ConfigError
from .harness import evaluate_checkpoint, load_config, run_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semicoupled",
        description="Train and probe semi-coupled spatio-temporal networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train a model from a JSON config")
    p_run.add_argument("config", help="path to the experiment config")
    p_run.add_argument("--resume", action="store_true",
                       help="continue from the checkpoint in the output directory")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a config's test split")
    p_eval.add_argument("checkpoint", help="path to checkpoint.bin")
    p_eval.add_argument("config", help="path to the experiment config")

    p_chains = sub.add_parser("analyze-chains",
                              help="enumerate back-propagation chains and gated survival")
    p_chains.add_argument("--depth", type=int, required=True, help="stack depth")
    p_chains.add_argument("--length", type=int, required=True, help="unrolled sequence length")
    p_chains.add_argument("--p", type=float, nargs="+", required=True,
                          help="gate drop probabilities to tabulate")
    p_chains.add_argument("--out", default=None, help="directory for per-probability CSV files")

    p_export = sub.add_parser("export-dataset", help="write synthetic sequences as PGM frames")
    p_export.add_argument("task", choices=("geometry_shape", "geometry_direction",
                                           "star_rhombus", "blob_forecast"))
    p_export.add_argument("out_dir", help="destination directory")
    p_export.add_argument("--count", type=int, default=8, help="number of sequences")
    p_export.add_argument("--seed", type=int, default=0, help="generation seed")
    p_export.add_argument("--t-steps", type=int, default=None, dest="t_steps",
                          help="frames per sequence (task default when omitted)")
    return parser


def _cmd_run(args) -> int:
    config = load_config(args.config)
    result = run_experiment(config, resume=args.resume)
    print(f"run complete: {result.steps_run} steps, artifacts in {result.output_dir}")
    for name, value in result.final_eval.items():
        print(f"  {name} = {value:.6f}")
    return 0


def _cmd_eval(args) -> int:
    config = load_config(args.config)
    scores = evaluate_checkpoint(args.checkpoint, config)
    for name, value in scores.items():
        print(f"{name} = {value:.6f}")
    return 0


def _cmd_chains(args) -> int:
    spec = chains.GridSpec(depth=args.depth, length=args.length)
    counts = chains.enumerate_chains(spec)
    print(f"depth {spec.depth}, length {spec.length}: {chains.total_chains(spec)} chains")
    for k in sorted(counts):
        print(f"  length {k}: {counts[k]}")
    for p in args.p:
        surviving = chains.expected_surviving(spec, p)
        print(f"p={p:g}: expected surviving {sum(surviving.values()):.6f}")
    if args.out:
        paths = chains.export_histograms(spec, args.p, args.out)
        for path in paths:
            print(f"wrote {path}")
    return 0


def _cmd_export(args) -> int:
    kwargs = {} if args.t_steps is None else {"t_steps": args.t_steps}
    manifest = tasks.export_dataset(args.task, args.out_dir, count=args.count,
                                    seed=args.seed, **kwargs)
    print(f"wrote {manifest}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "eval": _cmd_eval,
    "analyze-chains": _cmd_chains,
    "export-dataset": _cmd_export,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except SemiCoupledError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
