#!/usr/bin/env python3
"""List the shipped design presets and their constraint bounds."""

import os
import sys

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from lib import config
from lib.optimizer import CONSTRAINT_NAMES


def main():
    for name in config.list_presets():
        spec = config.load_spec(name)
        print(name)
        for label, lo, hi in zip(CONSTRAINT_NAMES, spec.c_lower, spec.c_upper):
            print(f"  {label:>12}: [{lo:g}, {hi:g}]")


if __name__ == "__main__":
    main()
