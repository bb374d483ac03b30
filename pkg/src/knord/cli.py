"""Command line entry point: knord <stage|all> --config <path> [--seed N] [--out DIR]."""

from __future__ import annotations

import argparse
import logging
import sys

from .pipeline import STAGES, StageError, parse_config, run_all, run_stage


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="knord",
        description="Classify known relations and discover novel relation "
                    "clusters in unlabeled data.")
    parser.add_argument("stage", choices=(*STAGES, "all"),
                        help="pipeline stage to run, or 'all'")
    parser.add_argument("--config", required=True, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", default=None,
                        help="override the config output directory")
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        cfg = parse_config(args.config, seed=args.seed, out_dir=args.out)
    except (OSError, ValueError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1

    try:
        if args.stage == "all":
            run_all(cfg)
        else:
            run_stage(args.stage, cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
