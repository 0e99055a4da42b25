"""Regenerate every figure's data: single runs, sweeps, fluid traces and plot tables.

    python3 scripts/run_figures.py --out results [--jobs 4] [--charts] [--quick]

--quick cuts sweeps to 3 replications for a smoke run.
"""
import argparse
import logging
from pathlib import Path

from ledbatsim import cli

RUNS = ["single-flow", "fig1-two-flow", "fig1c-staggered", "fig2a-pacing",
        "fig2b-slowstart", "fig2c-randomdrop", "fig2d-multdecrease"]
SWEEPS = ["fig3-psweep", "fig4-p-nflows", "plain-nflows", "fig5-beta-nflows", "fig6-betasweep"]
FLUID = ["fluid-two-flow", "fluid-three-flow"]


def call(args):
    code = cli.main(args)
    if code:
        raise SystemExit(f"failed ({code}): ledbatsim {' '.join(args)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--charts", action="store_true")
    ap.add_argument("--quick", action="store_true")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    charts = ["--charts"] if a.charts else []

    for name in RUNS:
        d = a.out / name
        call(["run", "--preset", name, "--seed", str(a.seed), "--out", str(d)])
        call(["plotdata", str(d)] + charts)
    for name in SWEEPS:
        d = a.out / name
        reps = ["--reps", "3"] if a.quick else []
        call(["sweep", "--preset", name, "--seed", str(a.seed), "--jobs", str(a.jobs),
              "--out", str(d)] + reps)
        call(["plotdata", str(d)] + charts)
    for name in FLUID:
        call(["fluid", "--preset", name, "--out", str(a.out / name)])


if __name__ == "__main__":
    main()
