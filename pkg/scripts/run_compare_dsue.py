#!/usr/bin/env python3
"""Compare the two-class equilibrium with the single-class baseline."""

import sys
from pathlib import Path

from dsuedhi import cli

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    scenario = ROOT / "scenarios" / "three_link" / "scenario.ini"
    out = ROOT / "out" / "compare_dsue"
    code = cli.main(["compare-dsue", "--scenario", str(scenario), "--out", str(out)])
    print((out / "compare.csv").read_text(), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
