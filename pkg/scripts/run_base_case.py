#!/usr/bin/env python3
"""Solve the two shipped scenarios and print a one-line summary of each."""

import json
import sys
from pathlib import Path

from dsuedhi import cli

ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    worst = 0
    for name in ("three_link", "grid"):
        scenario = ROOT / "scenarios" / name / "scenario.ini"
        out = ROOT / "out" / name
        code = cli.main(["solve", "--scenario", str(scenario), "--out", str(out)])
        worst = max(worst, code)
        payload = json.loads((out / "metrics.json").read_text())
        print(
            f"{payload['scenario_id']}: converged={payload['converged']} "
            f"iterations={payload['iterations']} "
            f"total_travel_time={payload['total_travel_time_veh_s']:.0f} veh-s "
            f"accuracy norms I/F={payload['accuracy_norm_instant']:.1f}/"
            f"{payload['accuracy_norm_forecast']:.1f} s"
        )
    return worst


if __name__ == "__main__":
    sys.exit(main())
