#!/usr/bin/env python3
"""Train one framework variant, then evaluate it on fresh seeds.

Chains train-irl (when the variant drives the planner), train-agent, and
evaluate against a shared --out directory.
"""

import argparse
import sys

from drivestack.cli import main

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--config", default=None)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", default="runs")
parser.add_argument("--variant", default="integrated",
                    choices=["integrated", "semi-integrated", "sequential"])
parser.add_argument("--episodes", type=int, default=None)
parser.add_argument("--cases", type=int, default=10)

if __name__ == "__main__":
    args = parser.parse_args()
    shared = ["--seed", str(args.seed), "--out", str(args.out)]
    if args.config is not None:
        shared += ["--config", str(args.config)]
    code = 0
    if args.variant != "sequential":
        code = main(["train-irl", *shared])
    if code == 0:
        extra = [] if args.episodes is None else ["--episodes",
                                                  str(args.episodes)]
        code = main(["train-agent", *shared, "--variant", args.variant,
                     *extra])
    if code == 0:
        code = main(["evaluate", *shared, "--variant", args.variant,
                     "--cases", str(args.cases)])
    sys.exit(code)
