#!/usr/bin/env python3
"""Compare single-head, double-Q, and bootstrapped agents plus a head sweep.

Writes curve_<label>.csv per strategy and drl_summary.json to --out.
"""

import sys

from drivestack.cli import main

if __name__ == "__main__":
    sys.exit(main(["compare-drl", *sys.argv[1:]]))
