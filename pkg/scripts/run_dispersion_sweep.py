#!/usr/bin/env python3
"""Sweep the dispersion parameter on the congested grid (strategic share 0.5)."""

import sys
from pathlib import Path

from dsuedhi import cli

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    scenario = ROOT / "scenarios" / "grid" / "scenario.ini"
    out = ROOT / "out" / "dispersion_sweep"
    code = cli.main([
        "sweep", "--scenario", str(scenario), "--out", str(out),
        "--param", "theta", "--values", "0.5,1.0,1.5,2.0",
    ])
    print((out / "sweep.csv").read_text(), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
