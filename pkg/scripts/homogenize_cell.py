#!/usr/bin/env python3
"""Forward homogenization of a given mesh and density (no optimization)."""

import argparse
import json
import logging
import os
import sys

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# Load .env for local development
from dotenv import load_dotenv
load_dotenv()

from lib import artifacts, config
from lib.config import DesignSpec
from lib.driver import evaluate_design
from lib.errors import EXIT_OK, CellDesignError, exit_code_for

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def main():
    parser = argparse.ArgumentParser(description="Homogenize a unit cell")
    parser.add_argument("--mesh", required=True, help="Mesh in native text format (mesh.txt)")
    parser.add_argument("--density", required=True, help="Density CSV with x, y, rho columns")
    parser.add_argument(
        "--config",
        default=None,
        help="Config file or preset for material law and bounds (default: built-in defaults)",
    )
    parser.add_argument("--json", action="store_true", help="Print the result as JSON")
    args = parser.parse_args()

    spec = config.load_spec(args.config) if args.config else DesignSpec()
    try:
        mesh = artifacts.read_mesh_text(args.mesh)
        rho = artifacts.read_density(args.density, mesh)
        evaluation = evaluate_design(mesh, rho, spec)
    except (CellDesignError, ValueError, OSError) as e:
        logger.error(f"Homogenization of {args.mesh} failed: {e}")
        print(f"Homogenization failed: {e}")
        sys.exit(exit_code_for(e))

    if args.json:
        print(json.dumps(evaluation.to_dict(), indent=2, sort_keys=True))
        sys.exit(EXIT_OK)

    print(f"Mass: {evaluation.mass:.6f} on {mesh.n_triangles} triangles")
    print("E^H:")
    for row in evaluation.tensors.E:
        print("  " + "  ".join(f"{v:12.6f}" for v in row))
    print("k^H:")
    for row in evaluation.tensors.k:
        print("  " + "  ".join(f"{v:12.6f}" for v in row))
    for name, value in evaluation.moduli.to_dict().items():
        print(f"  {name:>4}: {value:.6f}")
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
