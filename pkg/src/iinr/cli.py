"""Command line entry point: ``python -m iinr <command> [flags]``.

Flags mirror :class:`ExperimentConfig`; ``--config`` loads a JSON document
with the same fields, and explicit flags override it. ``IINR_OUTPUT_DIR``
and ``IINR_THREADS`` override the output directory and BLAS thread count.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import harness
from .harness import ExperimentConfig

TASK_COMMANDS = {"fit": "fit", "sr": "sr", "denoise": "denoise", "occupancy": "occupancy"}


def _bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _add_config_flags(p: argparse.ArgumentParser, with_task: bool) -> None:
    p.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
    if with_task:
        p.add_argument("--task", choices=sorted(harness.TASK_ITERATIONS))
    for f in dataclasses.fields(ExperimentConfig):
        if f.name in ("task",):
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.name == "seeds":
            p.add_argument(flag, type=int, nargs="+", default=None)
        elif f.type in ("bool",):
            p.add_argument(flag, type=_bool, default=None, metavar="BOOL")
        elif f.type in ("int", "int | None"):
            p.add_argument(flag, type=int, default=None)
        elif f.type in ("float", "float | None"):
            p.add_argument(flag, type=float, default=None)
        else:
            p.add_argument(flag, default=None)


def config_from_args(args, task: str | None) -> ExperimentConfig:
    d = json.loads(args.config.read_text()) if args.config else {}
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            d[f.name] = v
    if task is not None:
        d["task"] = task
    return ExperimentConfig.from_dict(d)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iinr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in TASK_COMMANDS:
        _add_config_flags(sub.add_parser(name, help=f"train and evaluate on the {name} task"), False)
    sp = sub.add_parser("sweep-steps", help="train once, reconstruct at several step counts")
    _add_config_flags(sp, True)
    sp.add_argument("--steps-list", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    ab = sub.add_parser("ablate", help="ablation sweep over one axis")
    _add_config_flags(ab, True)
    ab.add_argument("--axis", required=True, choices=harness.ABLATION_AXES)
    ab.add_argument("--values", nargs="+", default=None)
    rp = sub.add_parser("report", help="summarize record.json files")
    rp.add_argument("paths", nargs="+", type=Path, help="record.json files or run directories")
    rp.add_argument("--out", type=Path, default=Path("report"))
    return p


def _collect(paths) -> list:
    records = []
    for path in paths:
        files = sorted(path.rglob("record.json")) if path.is_dir() else [path]
        for f in files:
            records.extend(harness.read_records(f))
    return records


def _print_rows(records) -> None:
    for row in harness.metrics_rows(records):
        vals = " ".join(f"{k}={row[k]:.4f}" for k in ("psnr", "ssim", "iou") if row[k] is not None)
        steps = f" steps={row['steps']}" if row["steps"] else ""
        print(f"seed {row['seed']} {row['label']}{steps}: {vals}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        records = _collect(args.paths)
        if not records:
            print("no records found", file=sys.stderr)
            return 1
        for row in harness.report(records, args.out):
            std = "" if row["std"] is None else f" ± {row['std']:.4f}"
            steps = f" steps={row['steps']}" if row["steps"] else ""
            print(f"{row['label']}{steps} {row['metric']}: {row['mean']:.4f}{std} (n={row['n']})")
        return 0
    task = TASK_COMMANDS.get(args.command)
    cfg = config_from_args(args, task)
    if args.command == "sweep-steps":
        records = harness.sweep_steps(cfg, args.steps_list)
    elif args.command == "ablate":
        values = args.values
        if values is not None and args.axis == "depth":
            values = [int(v) for v in values]
        records = harness.sweep_ablation(cfg, args.axis, values)
    else:
        records = harness.run_experiment(cfg)
    _print_rows(records)
    print(f"outputs in {Path(os.environ.get('IINR_OUTPUT_DIR') or cfg.output_dir) / cfg.run_name}")
    return 1 if any(r.failed for r in records) else 0
