"""Command line: ``ledbatsim {run,sweep,plotdata,fluid}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import config, experiments, fluid
from .controller import ControllerError
from .netsim import ScenarioError, SimulationError

log = logging.getLogger("ledbatsim")


def _raw(args) -> dict:
    if bool(args.config) == bool(args.preset):
        raise config.ConfigError("give exactly one of --config or --preset")
    return config.load(args.config) if args.config else config.load_preset(args.preset)


def cmd_run(args) -> int:
    cfg = config.build_scenario(_raw(args))
    trace, rep = experiments.run_scenario(cfg, args.out, seed=args.seed)
    print(f"{cfg.name}: eta={rep.eta:.4f} F={rep.jain_long:.4f} "
          f"window=[{rep.window[0]:g}, {rep.window[1]:g}] -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    spec = config.build_sweep(_raw(args))
    if args.reps is not None:
        spec = replace(spec, replications=args.reps)
    res = experiments.run_sweep(spec, args.out, jobs=args.jobs, master_seed=args.seed or 0)
    for a in res.aggregate:
        print(f"{a['scenario_id']} param={a['param']:g} eta={a['eta_mean']:.4f}"
              f"+-{a['eta_var']:.2g} F={a['jain_long_mean']:.4f}+-{a['jain_long_var']:.2g}")
    return 0


def cmd_plotdata(args) -> int:
    for path in experiments.emit_plotdata(args.input, args.out, charts=args.charts):
        print(path)
    return 0


def cmd_fluid(args) -> int:
    sys_, t_end = config.build_fluid(_raw(args))
    if args.t_end is not None:
        t_end = args.t_end
    verdict = fluid.check_proposition(sys_, t_end)
    text = verdict.to_text()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fluid.integrate(sys_, t_end).write_csv(out / "fluid_trace.csv")
        (out / "verdict.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ledbatsim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def source(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--preset", help=f"built-in config ({', '.join(config.preset_names())})")

    sp = sub.add_parser("run", help="simulate one scenario")
    source(sp)
    sp.add_argument("--seed", type=int, help="override the config seed")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="seeded parameter sweep")
    source(sp)
    sp.add_argument("--seed", type=int, default=0, help="master seed")
    sp.add_argument("--reps", type=int, help="override the replication count")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("plotdata", help="per-figure data files from a run or sweep directory")
    sp.add_argument("input")
    sp.add_argument("--out", help="defaults to the input directory")
    sp.add_argument("--charts", action="store_true", help="also write SVG charts (needs matplotlib)")
    sp.set_defaults(func=cmd_plotdata)

    sp = sub.add_parser("fluid", help="integrate the fluid model and check the window-gap property")
    source(sp)
    sp.add_argument("--t-end", type=float)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_fluid)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "reps", None) is not None and args.reps < 1:
        print("error: --reps must be >= 1", file=sys.stderr)
        return 2
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (config.ConfigError, ScenarioError, ControllerError, fluid.FluidError,
            SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
