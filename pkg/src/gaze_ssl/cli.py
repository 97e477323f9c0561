"""Command line entry point: ``gaze-ssl <command> --config run.yaml``."""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

from . import experiments as ex


def _seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _load(args) -> ex.ExperimentConfig:
    cfg = ex.load_config(args.config)
    return ex.with_seeds(cfg, args.seed_override)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    try:
        paths = ex.simulate_all(cfg, force=args.force)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


def cmd_build_streams(args) -> int:
    cfg = _load(args)
    try:
        paths = ex.build_all_streams(cfg, force=args.force)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(paths)} stream directories under {cfg.out() / 'streams'}")
    return 0


def cmd_detect_events(args) -> int:
    cfg = _load(args)
    print(ex.detect_events_all(cfg))
    return 0


def _cells(cfg, args):
    cells = ex.select_cells(cfg.grid(), args.cell)
    if not cells:
        print(f"error: no cell matches {args.cell!r}", file=sys.stderr)
    return cells


def cmd_train(args) -> int:
    cfg = _load(args)
    cells = _cells(cfg, args)
    store = ex.SessionStore(cfg)
    rows = [ex.run_cell(cfg, c, store, force=args.force, probe=False) for c in cells]
    for r in rows:
        print(f"{r['cell']}\t{r['status']}")
    return 0 if cells and all(r["status"] == "ok" for r in rows) else 1


def cmd_probe(args) -> int:
    cfg = _load(args)
    cells = _cells(cfg, args)
    store = ex.SessionStore(cfg)
    data = ex.probe_data(cfg, store)
    rows = [ex.run_cell(cfg, c, store, data, force=args.force) for c in cells]
    for r in rows:
        acc = "" if r["accuracy"] is None else f"{r['accuracy']:.4f}"
        print(f"{r['cell']}\t{acc}\t{r['status']}")
    return 0 if cells and all(r["status"] == "ok" for r in rows) else 1


def cmd_run_matrix(args) -> int:
    cfg = _load(args)
    result = ex.run_matrix(cfg, jobs=args.jobs, cell_filter=args.cell, force=args.force)
    for r in result.rows:
        acc = "" if r["accuracy"] is None else f"{r['accuracy']:.4f}"
        print(f"{r['cell']}\t{acc}\t{r['status']}")
    print(f"results: {result.accuracy_csv}")
    print(f"stats:   {result.stats_csv}")
    return 0 if result.rows and result.ok else 1


def cmd_behavior_stats(args) -> int:
    cfg = _load(args)
    policies = [p.strip() for p in args.policies.split(",")]
    report = ex.behavior_stats(cfg, strategy_policies=policies, force=args.force)
    for row in report.correlations:
        r = "n/a" if row["r"] is None else f"{row['r']:+.3f} (p={row['p_value']:.3g})"
        print(f"{row['group']:<12} {row['metric']:<18} {r}")
    print(f"report: {report.path}")
    return 0


def cmd_export_embeddings(args) -> int:
    cfg = _load(args)
    cells = _cells(cfg, args)
    for c in cells:
        print(ex.export_cell_embeddings(cfg, c, force=args.force))
    return 0 if cells else 1


COMMANDS = {
    "simulate": (cmd_simulate, "simulate every configured session"),
    "build-streams": (cmd_build_streams, "write crop streams and probe crops"),
    "detect-events": (cmd_detect_events, "saccade detection and behaviour metrics per session"),
    "train": (cmd_train, "train (or reuse cached) encoders for matching cells"),
    "probe": (cmd_probe, "linear-probe matching cells"),
    "run-matrix": (cmd_run_matrix, "train and probe every cell, write accuracy and stats CSVs"),
    "behavior-stats": (cmd_behavior_stats, "per-session accuracy vs looking-behaviour correlations"),
    "export-embeddings": (cmd_export_embeddings, "write probe-set embeddings of matching cells"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaze-ssl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (func, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--force", action="store_true", help="overwrite outputs and ignore cached encoders")
        p.add_argument("--seed-override", type=_seeds, default=None, metavar="S1,S2,...",
                       help="replace the configured seeds")
        p.add_argument("--cell", default=None, metavar="FILTER", help="glob or substring over cell ids")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for run-matrix")
        if name == "behavior-stats":
            p.add_argument("--policies", default="ToddlerLike", help="comma-separated gaze policies")
        p.set_defaults(func=func)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
