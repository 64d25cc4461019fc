#!/usr/bin/env python3
"""Homogenize standard lattice cells for comparison with optimized designs."""

import argparse
import logging
import os
import sys

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# Load .env for local development
from dotenv import load_dotenv
load_dotenv()

from lib.config import DesignSpec
from lib.driver import evaluate_design
from lib.errors import CellDesignError
from lib.lattices import LATTICES
from lib.mesh import build_structured_mesh

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)


def main():
    parser = argparse.ArgumentParser(description="Compare standard lattice cells")
    parser.add_argument("--n", type=int, default=64, help="Mesh subdivisions per side (default: 64)")
    parser.add_argument("--width", type=float, default=0.1, help="Strut width (default: 0.1)")
    args = parser.parse_args()

    spec = DesignSpec()
    mesh = build_structured_mesh(args.n)
    print(f"{'cell':>15} {'mass':>8} {'Ex':>9} {'Ey':>9} {'G':>9} {'k11':>9} {'k22':>9}")
    for name, rasterize in LATTICES.items():
        if name == "cavity":
            rho = rasterize(mesh, rho_min=spec.rho_min)
        else:
            rho = rasterize(mesh, args.width, spec.rho_min)
        try:
            evaluation = evaluate_design(mesh, rho, spec)
        except CellDesignError as e:
            logger.warning(f"Skipping {name}: {e}")
            continue
        m = evaluation.moduli
        print(
            f"{name:>15} {evaluation.mass:8.4f} {m.Ex:9.5f} {m.Ey:9.5f} "
            f"{m.G:9.5f} {m.k11:9.5f} {m.k22:9.5f}"
        )


if __name__ == "__main__":
    main()
