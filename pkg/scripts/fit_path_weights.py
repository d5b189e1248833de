#!/usr/bin/env python3
"""Generate the demonstration split and fit path-selection weights.

Artifacts land in --out (default runs/): expert_train.csv, expert_eval.csv,
path_weights.json.  Pass --config / --seed / --out as with the CLI.
"""

import sys

from drivestack.cli import main

if __name__ == "__main__":
    code = main(["synth-expert", *sys.argv[1:]])
    if code == 0:
        code = main(["train-irl", *sys.argv[1:]])
    sys.exit(code)
