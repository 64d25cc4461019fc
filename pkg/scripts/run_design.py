#!/usr/bin/env python3
"""Run one unit-cell design (adaptive loop or fixed-mesh baseline) and export its artifacts."""

import argparse
import logging
import os
import sys

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# Load .env for local development
from dotenv import load_dotenv
load_dotenv()

from lib import artifacts, config
from lib.driver import run
from lib.errors import EXIT_OK, RunAborted, exit_code_for

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def main():
    parser = argparse.ArgumentParser(description="Design a periodic unit cell")
    parser.add_argument(
        "--config",
        required=True,
        help=f"Config file or preset name ({', '.join(config.list_presets())})",
    )
    parser.add_argument(
        "--mode",
        choices=config.MODES,
        default=None,
        help="Override the mode of the config (adaptive or baseline)",
    )
    parser.add_argument("--seed", type=int, default=None, help="Override the RNG seed")
    parser.add_argument(
        "--out",
        default=None,
        help=f"Output directory (default: $CELLDESIGN_OUT_DIR or {config.DEFAULT_OUT_DIR})",
    )
    parser.add_argument(
        "--sequential",
        action="store_true",
        help="Solve the elastic and thermal cell problems one after the other",
    )
    args = parser.parse_args()

    try:
        spec = config.load_spec(args.config, mode=args.mode, seed=args.seed)
    except ValueError as e:
        print(f"Invalid configuration: {e}")
        sys.exit(exit_code_for(e))

    out_dir = args.out or config.out_dir()
    parallel = False if args.sequential else None
    print(f"Running {spec.mode} design {spec.name!r} (seed {spec.seed}) -> {out_dir}")

    try:
        result = run(spec, parallel=parallel)
    except RunAborted as e:
        path = artifacts.export_partial(e.report, out_dir)
        print(f"Run aborted: {e.cause}")
        print(f"Partial report written to {path}")
        sys.exit(exit_code_for(e))

    artifacts.export_run(result, out_dir)
    final = result.report.final
    print(f"Termination: {result.report.termination} after {result.report.iterations} iterations")
    print(f"Final mass: {final.mass:.6f} on {result.mesh.n_triangles} triangles")
    for name, entry in final.constraints.to_dict().items():
        print(f"  {name:>12}: {entry['value']:.6f}  in [{entry['lower']:g}, {entry['upper']:g}]")
    print(f"Artifacts written to {out_dir}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
