"""Multiplicative decrease with and without the once-per-RTT guard on beta-drops.

Runs the beta sweep and the beta x N sweep in both modes and prints a side by
side table of mean fairness and efficiency.

    python3 scripts/sensitivity_md_guard.py --out results/md_guard [--reps 25] [--jobs 4]
"""
import argparse
import csv
from pathlib import Path

from ledbatsim import cli

PAIRS = [("fig6-betasweep", "fig6-betasweep-perack"),
         ("fig5-beta-nflows", "fig5-beta-nflows-perack")]


def load(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results/md_guard"))
    ap.add_argument("--reps", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=1)
    a = ap.parse_args()
    extra = ["--reps", str(a.reps)] if a.reps else []
    for guarded, perack in PAIRS:
        tabs = []
        for name in (guarded, perack):
            d = a.out / name
            if cli.main(["sweep", "--preset", name, "--jobs", str(a.jobs), "--out", str(d)] + extra):
                raise SystemExit(f"sweep {name} failed")
            tabs.append(load(d / "aggregate.csv"))
        print(f"\n{guarded}: guarded vs per-ack")
        print(f"{'scenario':>28} {'param':>6}  {'F guard':>8} {'eta guard':>9}  {'F ack':>8} {'eta ack':>8}")
        for g, p in zip(*tabs):
            print(f"{g['scenario_id']:>28} {float(g['param']):>6g}  {float(g['jain_long_mean']):8.3f} "
                  f"{float(g['eta_mean']):9.4f}  {float(p['jain_long_mean']):8.3f} {float(p['eta_mean']):8.4f}")


if __name__ == "__main__":
    main()
