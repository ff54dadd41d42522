#!/usr/bin/env python3
"""Paired hill-field scans: conventional fixed-baseline rig vs planned views.

Runs the bundled hill scene twice over the same waypoints -- once with the
light rigidly offset 12 cm from the camera, once choosing the joint
camera/light pose per step from the candidate grid -- then compares the
two finished runs (information totals, per-face winner map, RMSE).

Outputs land under --out:
    fixed/    run directory of the conventional scan
    planned/  run directory of the planned scan
    report/   evaluate's report.json + winner_map.csv
"""

import argparse
import sys
from pathlib import Path

from scatterscan import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scene", default="scenes/hills.json",
                    help="scene JSON (default: bundled hill field)")
    ap.add_argument("--out", default="runs/hills",
                    help="output root (default: runs/hills)")
    ap.add_argument("--seed", type=int, default=None,
                    help="override the scene seed")
    args = ap.parse_args()

    out = Path(args.out)
    seed = [] if args.seed is None else ["--seed", str(args.seed)]

    for mode, sub in (("fixed-baseline", "fixed"), ("nbuv", "planned")):
        print(f"=== scan --mode {mode} -> {out / sub}")
        rc = cli.main(["scan", "--scene", args.scene, "--mode", mode,
                       "--out", str(out / sub)] + seed)
        if rc != 0:
            return rc

    print(f"=== evaluate -> {out / 'report'}")
    return cli.main(["evaluate", "--runs", str(out / "fixed"),
                     str(out / "planned"), "--out", str(out / "report")])


if __name__ == "__main__":
    sys.exit(main())
