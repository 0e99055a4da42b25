"""Packet-level and fluid simulation of LEDBAT late-comer unfairness and its fixes."""
from .controller import (
    ControlEvent,
    ControllerConfig,
    ControllerState,
    DelaySample,
    Variant,
    init_state,
    on_ack,
    on_loss,
    pacing_schedule,
)
from .netsim import FlowSpec, Scenario, SimTrace, run, staggered_scenario

__all__ = [
    "ControlEvent", "ControllerConfig", "ControllerState", "DelaySample", "Variant",
    "init_state", "on_ack", "on_loss", "pacing_schedule",
    "FlowSpec", "Scenario", "SimTrace", "run", "staggered_scenario",
]
