#!/usr/bin/env python3
"""Solve the congested grid from twenty seeded random initial patterns."""

import json
import sys
from pathlib import Path

from dsuedhi import cli

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    scenario = ROOT / "scenarios" / "grid" / "scenario.ini"
    out = ROOT / "out" / "multistart"
    code = cli.main([
        "multistart", "--scenario", str(scenario), "--out", str(out),
        "--n", "20", "--seed", "2026",
    ])
    print(json.dumps(json.loads((out / "multistart.json").read_text()), indent=2))
    return code


if __name__ == "__main__":
    sys.exit(main())
