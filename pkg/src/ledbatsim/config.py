"""Flat ``key = value`` config files for scenarios, sweeps and fluid systems.

One assignment per line, ``#`` starts a comment, lists are comma separated.
The same format is used for run manifests, so a manifest can be fed back in
as a config to reproduce a run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .controller import ControllerConfig, ControllerError, Variant
from .fluid import FluidSystem, staggered_errors
from .netsim import FlowSpec, Scenario, ScenarioError, staggered_scenario


class ConfigError(ValueError):
    pass


SCENARIO_KEYS = {
    "capacity_pps": float, "buffer_pkts": int, "prop_delay": float, "packet_size": int,
    "duration": float, "seed": int, "sample_interval": float, "receiver_offset": float,
    "max_pending_events": int,
}
CONTROLLER_KEYS = {
    "variant": str, "target_tau": float, "gain": float, "drop_prob_p": float, "beta": float,
    "init_cwnd": float, "min_cwnd": float, "loss_backoff": float, "init_rtt": float,
    "md_guard": bool,
}
FLOW_KEYS = {"start_times": "floats", "n_flows": int, "gap": float, "initial_cwnd": float}
META_KEYS = {"name": str, "window_start": float, "window_end": float, "kind": str}
SWEEP_KEYS = {
    "parameter": str, "values": "floats", "replications": int, "arrival": str,
    "jitter": float, "t_max": float, "series": str, "series_values": "floats",
}
FLUID_KEYS = {
    "windows": "floats", "base_delay_error": "floats", "rtt_R": float, "capacity_C": float,
    "buffer_B": float, "queue": float, "step_h": float, "t_start": float, "t_end": float,
    "target_tau": float, "error_model": str, "variable_rtt": bool,
}

SWEEP_PARAMETERS = ("drop_prob_p", "beta", "n_flows")
ARRIVALS = ("fixed_gap", "uniform")


def parse_text(text: str, source: str = "<config>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        out[key] = value
    return out


def load(path) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text, str(path))


def preset_names() -> List[str]:
    files = resources.files("ledbatsim") / "presets"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".conf"))


def load_preset(name: str) -> Dict[str, str]:
    f = resources.files("ledbatsim") / "presets" / f"{name}.conf"
    if not f.is_file():
        raise ConfigError(f"unknown preset '{name}' (available: {', '.join(preset_names())})")
    return parse_text(f.read_text(), f"preset:{name}")


def _convert(key: str, value: str, kind):
    try:
        if kind == "floats":
            return [float(v) for v in value.split(",") if v.strip()]
        if kind is bool:
            low = value.lower()
            if low not in ("true", "false"):
                raise ValueError(value)
            return low == "true"
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"bad value for '{key}': {value!r}") from None


def _typed(raw: Dict[str, str], allowed: Dict[str, object]) -> Dict[str, object]:
    out = {}
    for key, value in raw.items():
        if key not in allowed:
            raise ConfigError(f"unknown config key '{key}'")
        out[key] = _convert(key, value, allowed[key])
    return out


@dataclass
class ScenarioConfig:
    scenario: Scenario
    name: str = "scenario"
    window: Optional[Tuple[float, float]] = None


def _controller(vals: Dict[str, object]) -> ControllerConfig:
    kw = {k: vals[k] for k in CONTROLLER_KEYS if k in vals}
    try:
        return ControllerConfig(**kw)
    except (ControllerError, ValueError) as exc:
        raise ConfigError(f"controller: {exc}") from None


def build_scenario(raw: Dict[str, str], *, allow_sweep_keys: bool = False) -> ScenarioConfig:
    allowed = {**SCENARIO_KEYS, **CONTROLLER_KEYS, **FLOW_KEYS, **META_KEYS}
    if allow_sweep_keys:
        allowed.update(SWEEP_KEYS)
    vals = _typed(raw, allowed)
    ctrl = _controller(vals)
    sc = Scenario(controller=ctrl, **{k: vals[k] for k in SCENARIO_KEYS if k in vals})
    init = vals.get("initial_cwnd")
    if "start_times" in vals:
        if "n_flows" in vals or "gap" in vals:
            raise ConfigError("give either 'start_times' or 'n_flows'/'gap', not both")
        starts = vals["start_times"]
        if not starts and not allow_sweep_keys:
            raise ConfigError("'start_times' is empty: a run needs at least one flow")
        sc = sc.with_starts(starts)
    elif "n_flows" in vals:
        try:
            sc = staggered_scenario(vals["n_flows"], vals.get("gap", 0.0), sc)
        except ScenarioError as exc:
            raise ConfigError(f"n_flows/gap: {exc}") from None
    elif not allow_sweep_keys:
        raise ConfigError("no flows: set 'start_times' or 'n_flows'")
    if init is not None:
        sc = replace(sc, flows=tuple(replace(f, initial_cwnd=init) for f in sc.flows))
    if not allow_sweep_keys:
        try:
            sc.validate()
        except (ScenarioError, ControllerError) as exc:
            raise ConfigError(str(exc)) from None
    window = None
    if "window_start" in vals or "window_end" in vals:
        window = (vals.get("window_start", 0.0), vals.get("window_end", sc.duration))
    return ScenarioConfig(sc, str(vals.get("name", "scenario")), window)


@dataclass
class SweepSpec:
    parameter: str
    values: List[float]
    replications: int
    base: Scenario
    n_flows: int = 2
    arrival: str = "fixed_gap"
    gap: float = 10.0
    jitter: float = 0.001
    t_max: float = 60.0
    series: Optional[str] = None
    series_values: List[float] = field(default_factory=lambda: [math.nan])
    name: str = "sweep"

    def validate(self) -> None:
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"parameter must be one of {SWEEP_PARAMETERS}, got '{self.parameter}'")
        if not self.values:
            raise ConfigError("'values' must not be empty")
        if self.replications < 1:
            raise ConfigError(f"'replications' must be >= 1, got {self.replications}")
        if self.arrival not in ARRIVALS:
            raise ConfigError(f"arrival must be one of {ARRIVALS}, got '{self.arrival}'")
        if self.series is not None:
            if self.series not in SWEEP_PARAMETERS or self.series == self.parameter:
                raise ConfigError(f"bad series '{self.series}'")
            if not self.series_values:
                raise ConfigError("'series_values' must not be empty")
        if self.parameter != "n_flows" and self.series != "n_flows" and self.n_flows < 1:
            raise ConfigError("n_flows must be >= 1")


def build_sweep(raw: Dict[str, str]) -> SweepSpec:
    vals = _typed(raw, {**SCENARIO_KEYS, **CONTROLLER_KEYS, **FLOW_KEYS, **META_KEYS, **SWEEP_KEYS})
    for key in ("parameter", "values"):
        if key not in vals:
            raise ConfigError(f"sweep config is missing '{key}'")
    if "start_times" in vals:
        raise ConfigError("'start_times' is not allowed in a sweep; arrivals come from 'arrival'")
    param = vals["parameter"]
    series = vals.get("series")
    # the swept parameter must be valid for the controller, so seed it with the first value
    ctrl_raw = dict(raw)
    for key, first in ((param, vals["values"][0] if vals["values"] else None),
                       (series, vals.get("series_values", [None])[0])):
        if key in ("drop_prob_p", "beta") and first is not None:
            ctrl_raw[key] = repr(first)
    for key in ("n_flows", "gap"):
        ctrl_raw.pop(key, None)
    base = build_scenario(ctrl_raw, allow_sweep_keys=True).scenario
    spec = SweepSpec(
        parameter=param,
        values=list(vals["values"]),
        replications=vals.get("replications", 1),
        base=base,
        n_flows=vals.get("n_flows", 2),
        arrival=vals.get("arrival", "fixed_gap"),
        gap=vals.get("gap", 10.0),
        jitter=vals.get("jitter", 0.001),
        t_max=vals.get("t_max", 60.0),
        series=series,
        series_values=list(vals.get("series_values", [math.nan])) if series else [math.nan],
        name=str(vals.get("name", "sweep")),
    )
    spec.validate()
    return spec


def build_fluid(raw: Dict[str, str]) -> Tuple[FluidSystem, float]:
    vals = _typed(raw, {**FLUID_KEYS, "kind": str, "name": str})
    if "windows" not in vals:
        raise ConfigError("fluid config is missing 'windows'")
    n = len(vals["windows"])
    tau = vals.get("target_tau", 0.025)
    if "base_delay_error" in vals:
        errors = vals["base_delay_error"]
    elif vals.get("error_model", "staggered") == "staggered":
        errors = staggered_errors(n, tau)
    else:
        raise ConfigError(f"bad value for 'error_model': {vals['error_model']!r}")
    kw = {k: vals[k] for k in ("rtt_R", "capacity_C", "buffer_B", "queue", "step_h", "t_start",
                               "variable_rtt") if k in vals}
    sys = FluidSystem(windows=tuple(vals["windows"]), base_delay_error=tuple(errors),
                      target_tau=tau, **kw)
    try:
        sys.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return sys, vals.get("t_end", sys.t_start + 60.0)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, Variant):
        return v.value
    return str(v)


def manifest(cfg: ScenarioConfig) -> str:
    """Fully resolved scenario as config text; loading it reproduces the run."""
    sc = cfg.scenario
    c = sc.controller
    lines = [f"name = {cfg.name}"]
    for key in SCENARIO_KEYS:
        lines.append(f"{key} = {_fmt(getattr(sc, key))}")
    lines.append(f"start_times = {_fmt([f.start_time for f in sc.flows])}")
    inits = {f.initial_cwnd for f in sc.flows}
    if len(inits) == 1 and None not in inits:
        lines.append(f"initial_cwnd = {_fmt(inits.pop())}")
    for key in CONTROLLER_KEYS:
        val = getattr(c, key)
        if val is not None:
            lines.append(f"{key} = {_fmt(val)}")
    if cfg.window is not None:
        lines.append(f"window_start = {_fmt(float(cfg.window[0]))}")
        lines.append(f"window_end = {_fmt(float(cfg.window[1]))}")
    return "\n".join(lines) + "\n"
