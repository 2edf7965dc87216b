"""Command line entry point: ``sidlab run <config>`` and ``sidlab validate <config>``."""

from __future__ import annotations

import argparse
import sys

from .errors import SidlabError
from .harness import estimated_steps, load_config, run_experiment
from .seeding import WORKERS_ENV


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sidlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config")
    run.add_argument("--workers", type=int, default=None,
                     help=f"replica worker threads (default: ${WORKERS_ENV} or 1)")
    run.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    val = sub.add_parser("validate", help="check a config file without running it")
    val.add_argument("config")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(f"{args.config}: valid {cfg.experiment} config, "
                  f"estimated {estimated_steps(cfg):.3g} Euler steps")
            return 0
        manifest = run_experiment(cfg, out_dir=args.out, workers=args.workers)
    except (SidlabError, OSError) as exc:
        print(f"sidlab: error: {exc}", file=sys.stderr)
        return 2
    print(f"outputs in {manifest.out_dir}")
    with open(f"{manifest.out_dir}/report.txt") as fh:
        sys.stdout.write(fh.read())
    return 0


if __name__ == "__main__":
    sys.exit(main())
