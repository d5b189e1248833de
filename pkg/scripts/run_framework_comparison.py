#!/usr/bin/env python3
"""Train the three framework variants and compare them on matched seeds.

Writes learning curves, phase planes, per-episode CSVs, and
framework_summary.json to --out.  At the default config this is the full
training budget; pass --episodes for a shorter run.
"""

import sys

from drivestack.cli import main

if __name__ == "__main__":
    sys.exit(main(["compare-frameworks", *sys.argv[1:]]))
