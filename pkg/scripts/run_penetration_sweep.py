#!/usr/bin/env python3
"""Sweep the share of travelers receiving instantaneous information."""

import sys
from pathlib import Path

from dsuedhi import cli

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    scenario = ROOT / "scenarios" / "grid" / "scenario.ini"
    out = ROOT / "out" / "penetration_sweep"
    code = cli.main([
        "sweep", "--scenario", str(scenario), "--out", str(out),
        "--param", "lambda", "--values", "0.999,0.75,0.5,0.25,0.001",
    ])
    print((out / "sweep.csv").read_text(), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
