#!/usr/bin/env python3
"""Re-homogenize a finished design on a thresholded geometry and a fine uniform mesh."""

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
from lib.errors import EXIT_OK, CellDesignError, exit_code_for

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def main():
    parser = argparse.ArgumentParser(description="Verify a finished design")
    parser.add_argument(
        "--in",
        dest="run_dir",
        default=None,
        help=f"Run directory (default: $CELLDESIGN_OUT_DIR or {config.DEFAULT_OUT_DIR})",
    )
    parser.add_argument("--threshold", type=float, default=None, help="Material threshold")
    parser.add_argument("--h", type=float, default=None, help="Spacing of the verification mesh")
    args = parser.parse_args()

    run_dir = args.run_dir or config.out_dir()
    print(f"Verifying {run_dir}")
    try:
        stored, result = artifacts.verify_run(run_dir, args.threshold, args.h)
    except (CellDesignError, ValueError, OSError) as e:
        logger.error(f"Verification of {run_dir} failed: {e}")
        print(f"Verification failed: {e}")
        sys.exit(exit_code_for(e))

    final = stored.report.get("final") or {}
    reported = final.get("tensors", {}).get("E")
    verified = result.tensors.E[0, 0]
    print(f"Material fraction: {result.material_fraction:.4f} on {result.n_triangles} triangles")
    if reported is not None:
        change = (verified - reported[0][0]) / reported[0][0]
        print(f"E1111 reported {reported[0][0]:.6f}, verified {verified:.6f} ({change:+.1%})")
    for name, value in result.moduli.to_dict().items():
        print(f"  {name:>4}: {value:.6f}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
