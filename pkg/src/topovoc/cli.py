"""Command-line entry point: ``topovoc run <config.toml>``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .pipeline import StageError, run


def build_parser():
    parser = argparse.ArgumentParser(prog="topovoc", description="Topological clustering of vocalisation clips.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the pipeline described by a TOML config")
    p.add_argument("config", help="path to the TOML config file")
    stage = p.add_mutually_exclusive_group()
    stage.add_argument("--features-only", dest="stage", action="store_const", const="features",
                       help="stop after writing features.csv")
    stage.add_argument("--cluster-only", dest="stage", action="store_const", const="cluster",
                       help="only fit the mixture on an existing features.csv")
    stage.add_argument("--report-only", dest="stage", action="store_const", const="report",
                       help="only build tables and figure from an existing partition")
    p.add_argument("--output-dir", help="override output_dir from the config")
    p.add_argument("--seed", type=int, help="override the chain seed")
    p.add_argument("--workers", type=int, help="parallel feature-extraction workers")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, stage=args.stage, output_dir=args.output_dir, workers=args.workers)
        if args.seed is not None:
            cfg.dpmm.seed = args.seed
    except (OSError, ValueError) as exc:
        print(f"topovoc: [config] {exc}", file=sys.stderr)
        return 2
    try:
        result = run(cfg)
    except StageError as exc:
        print(f"topovoc: {exc}", file=sys.stderr)
        return 1
    if result is not None:
        k = len(result.table_cluster_by_month.rows)
        print(f"{len(result.partition)} clips in {k} clusters; outputs in {cfg.output_dir}")
    else:
        print(f"stage '{cfg.stage}' finished; outputs in {cfg.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
