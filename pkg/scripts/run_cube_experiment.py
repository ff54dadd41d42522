#!/usr/bin/env python3
"""Cube-scene path optimization: pattern-search the 6-view pose path.

Starts from the trivial circular path around the bundled cube scene,
runs the derivative-free pattern search over all 60 pose DOFs, then
executes both the trivial and the optimized paths and compares the
finished runs.

Outputs land under --out:
    path/       plan.json + optimize_report.json from the search
    trivial/    run directory of the unoptimized path
    optimized/  run directory of the optimized path
    report/     evaluate's report.json + winner_map.csv
"""

import argparse
import sys
from pathlib import Path

from scatterscan import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scene", default="scenes/cube.json",
                    help="scene JSON (default: bundled cube on plane)")
    ap.add_argument("--out", default="runs/cube",
                    help="output root (default: runs/cube)")
    ap.add_argument("--iterations", type=int, default=None,
                    help="pattern-search iterations (default: scene value)")
    ap.add_argument("--seed", type=int, default=None,
                    help="override the scene seed")
    args = ap.parse_args()

    out = Path(args.out)
    seed = [] if args.seed is None else ["--seed", str(args.seed)]
    iters = ([] if args.iterations is None
             else ["--iterations", str(args.iterations)])

    print(f"=== optimize-path -> {out / 'path'}")
    rc = cli.main(["optimize-path", "--scene", args.scene,
                   "--out", str(out / "path")] + iters + seed)
    if rc != 0:
        return rc

    print(f"=== scan --mode fixed-baseline -> {out / 'trivial'}")
    rc = cli.main(["scan", "--scene", args.scene, "--mode", "fixed-baseline",
                   "--out", str(out / "trivial")] + seed)
    if rc != 0:
        return rc

    print(f"=== scan --plan -> {out / 'optimized'}")
    rc = cli.main(["scan", "--scene", args.scene,
                   "--plan", str(out / "path" / "plan.json"),
                   "--out", str(out / "optimized")] + seed)
    if rc != 0:
        return rc

    print(f"=== evaluate -> {out / 'report'}")
    return cli.main(["evaluate", "--runs", str(out / "trivial"),
                     str(out / "optimized"), "--out", str(out / "report")])


if __name__ == "__main__":
    sys.exit(main())
