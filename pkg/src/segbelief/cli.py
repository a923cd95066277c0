"""Command-line entry point.

Subcommands:
  simulate  roll out episodes under a random policy, write trajectory JSONL
  infer     offline run-length inference over a trajectory file
  run       full experiment per config (traces + summaries into a run dir)
  compare   report across completed run directories

Exit codes: 0 success, 2 configuration error, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiment import (
    compare_runs,
    format_report,
    record_from_row,
    simulate_trajectories,
    write_run,
)
from .inference import infer_trajectory
from .experiment import build_model

EXIT_CONFIG = 2
EXIT_IO = 3


def _apply_overrides(cfg, args):
    run = cfg.run
    if getattr(args, "seed", None) is not None:
        run = dataclasses.replace(run, seed=args.seed)
    if getattr(args, "episodes", None) is not None:
        run = dataclasses.replace(run, episodes=args.episodes)
    if getattr(args, "out", None) is not None:
        run = dataclasses.replace(run, out=str(args.out))
    return dataclasses.replace(cfg, run=run)


def _cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    rows = simulate_trajectories(cfg)
    out = Path(cfg.run.out or "trajectory.jsonl")
    if out.is_dir():
        out = out / "trajectory.jsonl"
    with open(out, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} records to {out}")
    return 0


def _cmd_infer(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    model = build_model(cfg)
    try:
        lines = Path(args.input).read_text().splitlines()
    except FileNotFoundError as exc:
        raise OSError(str(exc)) from exc
    rows = [json.loads(line) for line in lines if line]
    out = Path(cfg.run.out or "posterior.jsonl")
    if out.is_dir():
        out = out / "posterior.jsonl"
    n = 0
    with open(out, "w") as fh:
        for episode in sorted({row["episode"] for row in rows}):
            records = [
                record_from_row(row, cfg.env_kind)
                for row in rows
                if row["episode"] == episode
            ]
            for step in infer_trajectory(records, model, cfg.inference):
                step["episode"] = episode
                fh.write(json.dumps(step, sort_keys=True) + "\n")
                n += 1
    print(f"wrote {n} posterior records to {out}")
    return 0


def _cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = cfg.run.out
    if out_dir is None:
        raise ConfigError("no output directory: set run.out in the config or pass --out")
    path = write_run(cfg, out_dir)
    print(f"run complete: {path}")
    return 0


def _cmd_compare(args) -> int:
    try:
        report = compare_runs(args.runs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(format_report(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segbelief",
        description="Segment-aware belief inference experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="override run.out")
        p.add_argument("--episodes", type=int, help="override run.episodes")

    p = sub.add_parser("simulate", help="roll out episodes with a random policy")
    common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("infer", help="offline inference over a trajectory file")
    common(p)
    p.add_argument("--input", required=True, help="trajectory JSONL from `simulate`")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("run", help="full experiment per config")
    common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="report across run directories")
    p.add_argument("runs", nargs="+", help="completed run directories")
    p.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
