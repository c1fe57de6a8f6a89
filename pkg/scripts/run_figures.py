#!/usr/bin/env python3
"""Run every checked-in figure recipe and drop CSV + SVG files under out/.

Usage:
    python scripts/run_figures.py [--only fig3c] [--trials N] [--seed S] [--threads T]

Full defaults take a while on a laptop (the Monte Carlo sweep dominates);
use --trials to shorten exploratory runs.
"""

import argparse
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from decenteq import harness

RECIPES = ("fig1", "fig3a", "fig3b", "fig3c")


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--only", choices=RECIPES, default=None)
    ap.add_argument("--trials", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    root = pathlib.Path(__file__).resolve().parents[1]
    out_dir = root / "out"
    out_dir.mkdir(exist_ok=True)

    names = [args.only] if args.only else list(RECIPES)
    for name in names:
        cfg = root / "figs" / f"{name}.cfg"
        spec = harness.load_config(str(cfg), {"seed": args.seed, "trials": args.trials})
        t0 = time.time()
        table = harness.run_experiment(spec, threads=args.threads)
        csv_path = out_dir / f"{name}.csv"
        table.write(str(csv_path))
        harness.write_svg(table, str(out_dir / f"{name}.svg"),
                          log_y=(spec.mode == "ser_mc"))
        print(f"{name}: {csv_path} ({time.time() - t0:.1f}s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
