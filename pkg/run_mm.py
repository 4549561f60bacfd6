#!/usr/bin/env python3
"""
Market-making quotes: closed-form proxy, exact lattice check, Monte-Carlo
correction and strategy simulation.

Usage:
    python run_mm.py quotes --spec data/ref1.json --t 0 --q 0
    python run_mm.py --help
"""

import sys

from mmapprox.cli import main

if __name__ == "__main__":
    sys.exit(main())
