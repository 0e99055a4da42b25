"""LEDBAT sender state machine and the four fairness variants.

The controller is simulator-agnostic: it consumes delay samples and loss
signals and mutates a window. Windows are in packets (real-valued), times
and delays in seconds.

Two call styles are offered. ``on_ack``/``on_loss`` are pure (they copy the
state first); ``update_on_ack``/``update_on_loss`` mutate in place and are what
the packet simulator uses on its hot path. Both share the same code.
"""
from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, field, replace
from typing import List, NamedTuple, Optional, Tuple

from .seeding import SplitMix64

RANDOM_DROP_FACTOR = 0.5

# Delay samples are quantised to this resolution before differencing, which
# makes queuing-delay estimates exactly invariant to a constant clock offset.
_DELAY_QUANTUM = 1e-9


class Variant(str, enum.Enum):
    PLAIN = "plain"
    RANDOM_PACING = "random_pacing"
    SLOW_START = "slow_start"
    RANDOM_DROP = "random_drop"
    MULT_DECREASE = "mult_decrease"


class ControllerError(ValueError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    target_tau: float = 0.025
    gain: Optional[float] = None  # defaults to 1/target_tau
    variant: Variant = Variant.PLAIN
    drop_prob_p: Optional[float] = None
    beta: Optional[float] = None
    init_cwnd: float = 2.0
    min_cwnd: float = 1.0
    loss_backoff: float = 0.5
    # guess used for pacing/guards before the first RTT sample exists
    init_rtt: float = 0.1
    # at most one beta-drop per RTT; False applies beta on every over-target ack
    md_guard: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.gain is None and self.target_tau > 0:
            object.__setattr__(self, "gain", 1.0 / self.target_tau)
        self.validate()

    def validate(self) -> None:
        if not self.target_tau > 0:
            raise ControllerError(f"target_tau must be > 0, got {self.target_tau}")
        if not self.gain > 0:
            raise ControllerError(f"gain must be > 0, got {self.gain}")
        if not self.init_cwnd >= self.min_cwnd >= 1:
            raise ControllerError(
                f"need init_cwnd >= min_cwnd >= 1, got {self.init_cwnd}, {self.min_cwnd}")
        if not 0 < self.loss_backoff < 1:
            raise ControllerError(f"loss_backoff must be in (0,1), got {self.loss_backoff}")
        if not self.init_rtt > 0:
            raise ControllerError(f"init_rtt must be > 0, got {self.init_rtt}")
        if self.variant is Variant.RANDOM_DROP:
            # the closed endpoints are degenerate but useful (p=0 equals plain)
            if self.drop_prob_p is None or not 0 <= self.drop_prob_p <= 1:
                raise ControllerError(
                    f"random_drop needs drop_prob_p in [0,1], got {self.drop_prob_p}")
        elif self.drop_prob_p is not None:
            raise ControllerError(f"drop_prob_p is only valid for random_drop, not {self.variant.value}")
        if self.variant is Variant.MULT_DECREASE:
            if self.beta is None or not 0 < self.beta < 1:
                raise ControllerError(f"mult_decrease needs beta in (0,1), got {self.beta}")
        elif self.beta is not None:
            raise ControllerError(f"beta is only valid for mult_decrease, not {self.variant.value}")


@dataclass
class ControllerState:
    cwnd: float
    base_delay: float = math.inf
    last_qdelay: float = 0.0
    in_slow_start: bool = False
    last_decrease_time: float = -math.inf
    rtt: Optional[float] = None  # latest sender-clock round-trip sample
    rng: SplitMix64 = field(default_factory=SplitMix64, repr=False)
    initialized: bool = True


class DelaySample(NamedTuple):
    one_way_delay: float  # receiver stamp minus sender stamp, offset included
    ack_time: float       # sender clock
    loss_flag: bool = False
    rtt: Optional[float] = None  # sender-clock round trip of this packet


class ControlEvent(NamedTuple):
    time: float
    kind: str  # "loss", "random_drop" or "beta_drop"
    factor: float


def init_state(cfg: ControllerConfig, seed: int = 0, rng: Optional[SplitMix64] = None) -> ControllerState:
    """Fresh state for a flow that starts now."""
    if rng is None:
        rng = SplitMix64(seed)
    return ControllerState(
        cwnd=float(cfg.init_cwnd),
        in_slow_start=cfg.variant is Variant.SLOW_START,
        rng=rng,
    )


def rtt_estimate(state: ControllerState, cfg: ControllerConfig) -> float:
    return state.rtt if state.rtt is not None else cfg.init_rtt


def update_on_ack(state: ControllerState, cfg: ControllerConfig, sample: DelaySample) -> List[ControlEvent]:
    """In-place ack processing; returns the multiplicative decreases it applied."""
    if not state.initialized:
        raise ControllerError("controller state is not initialized")
    if sample.loss_flag:
        raise ControllerError("loss samples must go through on_loss")

    owd = sample.one_way_delay
    if owd < state.base_delay:
        state.base_delay = owd
    q = round((owd - state.base_delay) / _DELAY_QUANTUM) * _DELAY_QUANTUM
    state.last_qdelay = q
    if sample.rtt is not None:
        state.rtt = sample.rtt

    variant = cfg.variant
    tau = cfg.target_tau
    w = state.cwnd
    events: List[ControlEvent] = []

    if variant is Variant.SLOW_START and state.in_slow_start:
        w += 1.0
    elif variant is Variant.MULT_DECREASE:
        if q > tau:
            # additive decrease is replaced, not supplemented
            if not cfg.md_guard or sample.ack_time - state.last_decrease_time >= rtt_estimate(state, cfg):
                w *= cfg.beta
                state.last_decrease_time = sample.ack_time
                events.append(ControlEvent(sample.ack_time, "beta_drop", cfg.beta))
        else:
            w += cfg.gain * (tau - q) / w
    else:
        w += cfg.gain * (tau - q) / w
        if variant is Variant.RANDOM_DROP:
            if w < cfg.min_cwnd:
                w = cfg.min_cwnd
            if state.rng.random() < cfg.drop_prob_p:
                w *= RANDOM_DROP_FACTOR
                events.append(ControlEvent(sample.ack_time, "random_drop", RANDOM_DROP_FACTOR))

    state.cwnd = w if w > cfg.min_cwnd else cfg.min_cwnd
    return events


def update_on_loss(state: ControllerState, cfg: ControllerConfig, now: float) -> Optional[ControlEvent]:
    """In-place loss reaction, at most one backoff per RTT estimate."""
    state.in_slow_start = False
    if now - state.last_decrease_time < rtt_estimate(state, cfg):
        return None
    state.cwnd = max(cfg.min_cwnd, state.cwnd * cfg.loss_backoff)
    state.last_decrease_time = now
    return ControlEvent(now, "loss", cfg.loss_backoff)


def copy_state(state: ControllerState) -> ControllerState:
    return replace(state, rng=copy.deepcopy(state.rng))


def on_ack(state: ControllerState, cfg: ControllerConfig,
           sample: DelaySample) -> Tuple[ControllerState, List[ControlEvent]]:
    new = copy_state(state)
    events = update_on_ack(new, cfg, sample)
    return new, events


def on_loss(state: ControllerState, cfg: ControllerConfig, now: float) -> ControllerState:
    new = copy_state(state)
    update_on_loss(new, cfg, now)
    return new


def pacing_schedule(state: ControllerState, cfg: ControllerConfig,
                    rtt_estimate: float, n_packets: int) -> List[float]:
    """Send offsets (seconds from now) for the next ``n_packets`` packets.

    Only random pacing spreads packets out: the first leaves immediately and
    the rest at sorted uniform draws over ``(0, rtt_estimate]``. Sorting keeps
    packets in sequence order. Every other variant sends back to back.
    """
    if n_packets < 1:
        raise ValueError("n_packets must be >= 1")
    if not rtt_estimate > 0:
        raise ValueError("rtt_estimate must be > 0")
    if cfg.variant is not Variant.RANDOM_PACING:
        return [0.0] * n_packets
    rnd = state.rng.random
    draws = sorted(rtt_estimate * (1.0 - rnd()) for _ in range(n_packets - 1))
    offsets = [0.0]
    for x in draws:
        prev = offsets[-1]
        offsets.append(x if x > prev else math.nextafter(prev, math.inf))
    return offsets
