"""Running scenarios and seeded parameter sweeps, and writing their outputs."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import metrics, netsim
from .config import ScenarioConfig, SweepSpec, manifest
from .netsim import Scenario, SimTrace
from .seeding import derive_seed

log = logging.getLogger(__name__)

RUN_HEADER = ["scenario_id", "variant", "param", "seed", "eta", "jain_long"]
AGG_HEADER = ["scenario_id", "variant", "param", "n_runs",
              "eta_mean", "eta_var", "jain_long_mean", "jain_long_var"]


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def simulate(scenario: Scenario) -> SimTrace:
    """Run with the fastest available engine (identical traces either way)."""
    from . import fastsim
    if fastsim.available():
        return fastsim.run(scenario)
    return netsim.run(scenario)


def run_scenario(cfg: ScenarioConfig, out_dir, seed: Optional[int] = None,
                 engine=None) -> Tuple[SimTrace, metrics.MetricsReport]:
    """Simulate one scenario and write trace, events, metrics and manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if seed is not None:
        cfg = replace(cfg, scenario=replace(cfg.scenario, seed=seed))
    trace = (engine or simulate)(cfg.scenario)
    (out / "manifest.txt").write_text(manifest(cfg))
    trace.write_csv(out / "trace.csv")
    trace.write_events_csv(out / "events.csv")
    if trace.n_flows and len(trace.times) > 1:
        rep = metrics.report(trace, cfg.window)
    else:
        rep = metrics.MetricsReport(eta=0.0, jain_long=math.nan, per_flow_rate=[],
                                    n_flows=trace.n_flows, window=(0.0, trace.duration))
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_HEADER)
        w.writerow([cfg.name, cfg.scenario.controller.variant.value, "",
                    cfg.scenario.seed, _fmt(rep.eta), _fmt(rep.jain_long)])
    with open(out / "jain_short.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_start", "F"])
        for t, f in rep.jain_short:
            w.writerow([_fmt(float(t)), _fmt(float(f))])
    return trace, rep


# -- sweeps -----------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    scenario_id: str
    series_value: float
    value: float
    rep: int
    seed: int
    scenario: Scenario


def arrival_times(spec: SweepSpec, n_flows: int, seed: int) -> List[float]:
    rng = np.random.default_rng(derive_seed("arrivals", seed))
    if spec.arrival == "fixed_gap":
        starts = [0.0] + [i * spec.gap + rng.uniform(-spec.jitter, spec.jitter)
                          for i in range(1, n_flows)]
    else:
        starts = rng.uniform(0.0, spec.t_max, size=n_flows).tolist()
    return sorted(float(s) for s in starts)


def _apply(sc: Scenario, key: Optional[str], value: float, n_flows: int) -> Tuple[Scenario, int]:
    if key is None:
        return sc, n_flows
    if key == "n_flows":
        return sc, int(value)
    return replace(sc, controller=replace(sc.controller, **{key: value})), n_flows


def scenario_id(spec: SweepSpec, series_value: float) -> str:
    if spec.series is None:
        return spec.name
    return f"{spec.name}[{spec.series}={series_value!r}]"


def cells(spec: SweepSpec, master_seed: int) -> List[Cell]:
    """Every (series value, parameter value, replication) with its derived seed."""
    spec.validate()
    out = []
    for sv in spec.series_values:
        for v in spec.values:
            sc, n = _apply(spec.base, spec.series, sv, spec.n_flows)
            sc, n = _apply(sc, spec.parameter, v, n)
            for r in range(spec.replications):
                seed = derive_seed(master_seed, spec.series, sv, spec.parameter, v, r)
                starts = arrival_times(spec, n, seed)
                cell_sc = replace(sc, seed=seed).with_starts(starts)
                out.append(Cell(scenario_id(spec, sv), sv, v, r, seed, cell_sc))
    return out


def run_cell(cell: Cell) -> Tuple[float, float]:
    trace = simulate(cell.scenario)
    rep = metrics.report(trace, short_window=math.inf)
    return rep.eta, rep.jain_long


@dataclass
class SweepResult:
    rows: List[dict]
    aggregate: List[dict]


def run_sweep(spec: SweepSpec, out_dir=None, jobs: int = 1, master_seed: int = 0) -> SweepResult:
    """Run every cell of ``spec``; output is independent of ``jobs``."""
    todo = cells(spec, master_seed)
    log.info("sweep %s: %d simulations on %d worker(s)", spec.name, len(todo), jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_cell, todo, chunksize=max(1, len(todo) // (8 * jobs))))
    else:
        results = [run_cell(c) for c in todo]

    rows = []
    for c, (eta, fj) in zip(todo, results):
        rows.append(dict(scenario_id=c.scenario_id, variant=c.scenario.controller.variant.value,
                         param=c.value, series_value=c.series_value, seed=c.seed,
                         rep=c.rep, eta=eta, jain_long=fj))
    agg = aggregate_rows(rows)
    if out_dir is not None:
        write_sweep(out_dir, spec, rows, agg)
    return SweepResult(rows, agg)


def aggregate_rows(rows: Sequence[dict]) -> List[dict]:
    groups: Dict[Tuple[str, float], List[dict]] = {}
    for r in rows:
        groups.setdefault((r["scenario_id"], r["param"]), []).append(r)
    out = []
    for (sid, param), grp in groups.items():
        reps = [metrics.MetricsReport(eta=g["eta"], jain_long=g["jain_long"], per_flow_rate=[],
                                      n_flows=0, window=(0.0, 0.0)) for g in grp]
        stats = metrics.aggregate(reps)
        out.append(dict(scenario_id=sid, variant=grp[0]["variant"], param=param,
                        series_value=grp[0]["series_value"], n_runs=len(grp),
                        eta_mean=stats["eta"][0], eta_var=stats["eta"][1],
                        jain_long_mean=stats["jain_long"][0], jain_long_var=stats["jain_long"][1]))
    return out


def write_sweep(out_dir, spec: SweepSpec, rows, agg) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_HEADER)
        for r in rows:
            w.writerow([r["scenario_id"], r["variant"], _fmt(float(r["param"])), r["seed"],
                        _fmt(float(r["eta"])), _fmt(float(r["jain_long"]))])
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGG_HEADER)
        for a in agg:
            w.writerow([a["scenario_id"], a["variant"], _fmt(float(a["param"])), a["n_runs"]]
                       + [_fmt(float(a[k])) for k in AGG_HEADER[4:]])
    (out / "sweep.txt").write_text(sweep_manifest(spec))


def sweep_manifest(spec: SweepSpec) -> str:
    base = ScenarioConfig(replace(spec.base, flows=()), spec.name)
    lines = manifest(base).splitlines()
    lines = [ln for ln in lines if not ln.startswith(("start_times", "seed ="))]
    lines += [f"parameter = {spec.parameter}",
              f"values = {', '.join(repr(float(v)) for v in spec.values)}",
              f"replications = {spec.replications}",
              f"arrival = {spec.arrival}",
              f"n_flows = {spec.n_flows}",
              f"gap = {spec.gap!r}",
              f"jitter = {spec.jitter!r}",
              f"t_max = {spec.t_max!r}"]
    if spec.series is not None:
        lines += [f"series = {spec.series}",
                  f"series_values = {', '.join(repr(float(v)) for v in spec.series_values)}"]
    return "\n".join(lines) + "\n"


# -- plot data --------------------------------------------------------------

_PARAM_LABEL = {"drop_prob_p": "p", "beta": "beta", "n_flows": "n_flows"}


def _read_csv(path: Path) -> List[dict]:
    if not path.is_file():
        raise FileNotFoundError(f"missing input {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_plotdata(in_dir, out_dir=None, charts: bool = False) -> List[Path]:
    """Turn a run or sweep output directory into per-figure data files."""
    src = Path(in_dir)
    dst = Path(out_dir) if out_dir is not None else src
    dst.mkdir(parents=True, exist_ok=True)
    if (src / "trace.csv").is_file():
        files = _plot_run(src, dst)
    elif (src / "aggregate.csv").is_file():
        files = _plot_sweep(src, dst)
    else:
        raise FileNotFoundError(f"{src} holds neither trace.csv nor aggregate.csv")
    if charts:
        files += _charts(files)
    return files


def _plot_run(src: Path, dst: Path) -> List[Path]:
    rows = _read_csv(src / "trace.csv")
    fids = sorted({int(r["flow_id"]) for r in rows})
    by_t: Dict[str, Dict[int, str]] = {}
    queue: Dict[str, str] = {}
    for r in rows:
        by_t.setdefault(r["t"], {})[int(r["flow_id"])] = r["cwnd_pkts"]
        queue[r["t"]] = r["queue_pkts"]
    cw, qu = dst / "plot_cwnd.csv", dst / "plot_queue.csv"
    with open(cw, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"cwnd_flow{f}" for f in fids])
        for t, vals in by_t.items():
            w.writerow([t] + [vals[f] for f in fids])
    with open(qu, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "queue_pkts"])
        for t, q in queue.items():
            w.writerow([t, q])
    return [cw, qu]


def _plot_sweep(src: Path, dst: Path) -> List[Path]:
    agg = _read_csv(src / "aggregate.csv")
    meta = {}
    if (src / "sweep.txt").is_file():
        from .config import parse_text
        meta = parse_text((src / "sweep.txt").read_text())
    param = meta.get("parameter", "param")
    label = _PARAM_LABEL.get(param, param)
    groups: Dict[str, List[dict]] = {}
    for r in agg:
        groups.setdefault(r["scenario_id"], []).append(r)
    files = []
    for i, (sid, grp) in enumerate(groups.items()):
        suffix = "" if len(groups) == 1 else f"_{i + 1}"
        path = dst / f"plot_metrics{suffix}.csv"
        header = [label]
        if param == "beta":
            header.append("one_minus_beta")
        header += ["eta_mean", "eta_var", "F_mean", "F_var", "scenario_id"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in sorted(grp, key=lambda r: float(r["param"])):
                row = [r["param"]]
                if param == "beta":
                    row.append(repr(1.0 - float(r["param"])))
                row += [r["eta_mean"], r["eta_var"], r["jain_long_mean"], r["jain_long_var"], sid]
                w.writerow(row)
        files.append(path)
    return files


def _charts(files: Iterable[Path]) -> List[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = []
    for path in files:
        rows = _read_csv(path)
        if not rows:
            continue
        cols = list(rows[0].keys())
        x = cols[0]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        if "eta_mean" in cols:
            xs = [float(r["one_minus_beta"] if "one_minus_beta" in cols else r[x]) for r in rows]
            for m, name in (("eta", "efficiency"), ("F", "fairness")):
                ys = [float(r[f"{m}_mean"]) for r in rows]
                err = [math.sqrt(max(0.0, float(r[f"{m}_var"]))) for r in rows]
                ax.errorbar(xs, ys, yerr=err, marker="o", capsize=3, label=name)
            if x in ("p", "beta") or "one_minus_beta" in cols:
                ax.set_xscale("log")
            ax.set_xlabel("1 - beta" if "one_minus_beta" in cols else x)
            ax.set_ylim(0, 1.05)
        else:
            xs = [float(r[x]) for r in rows]
            for c in cols[1:]:
                ax.plot(xs, [float(r[c]) for r in rows], label=c)
            ax.set_xlabel("time (s)")
        ax.legend()
        fig.tight_layout()
        svg = path.with_suffix(".svg")
        fig.savefig(svg)
        plt.close(fig)
        out.append(svg)
    return out
