"""Discrete-event simulator: N LEDBAT flows over one drop-tail bottleneck.

The clock is an integer number of nanoseconds, so event ordering, delays and
receiver clock offsets are all exact. Paths are symmetric: a packet waits in
the FIFO, is serialised at rate ``capacity_pps``, propagates ``prop_delay`` to
the receiver and the ack takes another ``prop_delay`` back. Acks are never
queued or lost. A dropped packet is reported to its sender at the time its
ack would have arrived.
"""
from __future__ import annotations

import csv
import heapq
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .controller import (
    ControllerConfig,
    DelaySample,
    Variant,
    init_state,
    pacing_schedule,
    rtt_estimate,
    update_on_ack,
    update_on_loss,
)
from .seeding import flow_rng

NS = 1_000_000_000

_ACK, _LOSS, _START, _SEND, _ROUND = range(5)


class ScenarioError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowSpec:
    flow_id: int
    start_time: float
    initial_cwnd: Optional[float] = None  # falls back to the controller's init_cwnd


@dataclass(frozen=True)
class Scenario:
    capacity_pps: float = 800.0
    buffer_pkts: int = 100
    prop_delay: float = 0.025
    packet_size: int = 1500
    flows: Tuple[FlowSpec, ...] = ()
    duration: float = 30.0
    seed: int = 0
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    sample_interval: float = 0.1
    receiver_offset: float = 0.0
    max_pending_events: int = 1_000_000

    def __post_init__(self):
        object.__setattr__(self, "flows", tuple(self.flows))

    def validate(self) -> None:
        if not self.capacity_pps > 0:
            raise ScenarioError(f"capacity_pps must be > 0, got {self.capacity_pps}")
        if self.buffer_pkts < 1:
            raise ScenarioError(f"buffer_pkts must be >= 1, got {self.buffer_pkts}")
        if self.prop_delay < 0:
            raise ScenarioError(f"prop_delay must be >= 0, got {self.prop_delay}")
        if self.duration < 0:
            raise ScenarioError(f"duration must be >= 0, got {self.duration}")
        if not self.sample_interval > 0:
            raise ScenarioError(f"sample_interval must be > 0, got {self.sample_interval}")
        ids = [f.flow_id for f in self.flows]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"duplicate flow ids: {ids}")
        starts = [f.start_time for f in self.flows]
        if any(s < 0 for s in starts):
            raise ScenarioError("flow start times must be >= 0")
        if any(a > b for a, b in zip(starts, starts[1:])):
            raise ScenarioError(f"flow start times must be non-decreasing, got {starts}")
        if self.duration > 0 and any(s >= self.duration for s in starts):
            raise ScenarioError("every flow must start before the end of the run")
        for f in self.flows:
            if f.initial_cwnd is not None and f.initial_cwnd < self.controller.min_cwnd:
                raise ScenarioError(f"flow {f.flow_id}: initial_cwnd below min_cwnd")
        self.controller.validate()

    @property
    def n_flows(self) -> int:
        return len(self.flows)

    @property
    def start_times(self) -> List[float]:
        return [f.start_time for f in self.flows]

    def with_starts(self, starts: Sequence[float]) -> "Scenario":
        flows = tuple(FlowSpec(i + 1, float(s)) for i, s in enumerate(starts))
        return replace(self, flows=flows)


def staggered_scenario(n: int, gap: float, base: Scenario) -> Scenario:
    """``base`` with ``n`` flows starting at 0, gap, 2*gap, ..."""
    if n < 1:
        raise ScenarioError(f"n must be >= 1, got {n}")
    if gap < 0:
        raise ScenarioError(f"gap must be >= 0, got {gap}")
    return base.with_starts([i * gap for i in range(n)])


@dataclass
class SimTrace:
    times: np.ndarray            # (S,) sample instants, seconds
    flow_ids: List[int]
    start_times: List[float]
    cwnd: np.ndarray             # (S, N) packets; 0 before a flow starts
    delivered: np.ndarray        # (S, N) cumulative packets through the bottleneck
    queue: np.ndarray            # (S,) packets in the bottleneck (waiting + in service)
    losses: List[Tuple[float, int]]
    decreases: List[Tuple[float, int, str, float]]
    sent: np.ndarray             # (N,) totals at the end of the run
    dropped: np.ndarray
    in_queue: np.ndarray
    acked: np.ndarray
    delivered_total: np.ndarray
    capacity_pps: float
    duration: float
    sample_interval: float
    packet_size: int = 1500

    @property
    def n_flows(self) -> int:
        return len(self.flow_ids)

    def rates(self) -> np.ndarray:
        """Per-interval throughput in packets/s, row k covering (t[k-1], t[k]]."""
        out = np.zeros_like(self.delivered, dtype=float)
        if len(self.times) > 1:
            dt = np.diff(self.times)[:, None]
            out[1:] = np.diff(self.delivered, axis=0) / dt
        return out

    def index_at(self, t: float) -> int:
        """Index of the sample closest to ``t``."""
        if len(self.times) == 0:
            raise ValueError("empty trace")
        return int(np.clip(round(t / self.sample_interval), 0, len(self.times) - 1))

    def delivered_between(self, t0: float, t1: float) -> np.ndarray:
        i0, i1 = self.index_at(t0), self.index_at(t1)
        return (self.delivered[i1] - self.delivered[i0]).astype(float)

    def write_csv(self, path) -> None:
        rates = self.rates()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "flow_id", "cwnd_pkts", "rate_pps", "queue_pkts"])
            for k, t in enumerate(self.times):
                q = int(self.queue[k])
                for j, fid in enumerate(self.flow_ids):
                    w.writerow([repr(float(t)), fid, repr(float(self.cwnd[k, j])),
                                repr(float(rates[k, j])), q])

    def write_events_csv(self, path) -> None:
        rows = [(t, fid, "loss", "") for t, fid in self.losses]
        rows += [(t, fid, kind, repr(float(factor))) for t, fid, kind, factor in self.decreases]
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "flow_id", "event", "detail"])
            for t, fid, ev, detail in rows:
                w.writerow([repr(float(t)), fid, ev, detail])


class _Flow:
    __slots__ = ("idx", "fid", "state", "next_seq", "in_flight", "round_end",
                 "bonus", "carry", "started")

    def __init__(self, idx, fid, state):
        self.idx = idx
        self.fid = fid
        self.state = state
        self.next_seq = 0
        self.in_flight = 0
        self.round_end = 0
        self.bonus = 0
        self.carry = 0.0
        self.started = False


def _new_round(fl: _Flow) -> None:
    w = fl.state.cwnd
    fl.carry += w - math.floor(w)
    if fl.carry >= 1.0:
        fl.carry -= 1.0
        fl.bonus = 1
    else:
        fl.bonus = 0
    fl.round_end = fl.next_seq


def run(scenario: Scenario) -> SimTrace:
    """Simulate ``scenario`` and return its sampled trace and event logs."""
    scenario.validate()
    cfg = scenario.controller
    n = scenario.n_flows
    flow_ids = [f.flow_id for f in scenario.flows]
    starts = scenario.start_times

    dur_ns = round(scenario.duration * NS)
    dt_ns = round(scenario.sample_interval * NS)
    n_samples = dur_ns // dt_ns + 1 if dur_ns > 0 else 0

    times = np.arange(n_samples, dtype=np.int64) * dt_ns / NS
    cwnd_tr = np.zeros((n_samples, n))
    deliv_tr = np.zeros((n_samples, n), dtype=np.int64)
    queue_tr = np.zeros(n_samples, dtype=np.int64)

    sent = [0] * n
    dropped = [0] * n
    acked = [0] * n
    delivered = [0] * n
    losses: List[Tuple[float, int]] = []
    decreases: List[Tuple[float, int, str, float]] = []

    svc = round(NS / scenario.capacity_pps)
    prop = round(scenario.prop_delay * NS)
    rx_offset = round(scenario.receiver_offset * NS)
    buf = scenario.buffer_pkts
    pacing = cfg.variant is Variant.RANDOM_PACING
    max_pending = scenario.max_pending_events

    flows: List[_Flow] = []
    heap: list = []
    for i, spec in enumerate(scenario.flows):
        st = init_state(cfg, rng=flow_rng(scenario.seed, spec.flow_id))
        if spec.initial_cwnd is not None:
            st.cwnd = float(spec.initial_cwnd)
        flows.append(_Flow(i, spec.flow_id, st))
        heap.append((round(spec.start_time * NS), spec.flow_id, -1, _START, i))
    heapq.heapify(heap)

    # bottleneck: departure instants and owners of packets still in the system
    q_dep: deque = deque()
    q_own: deque = deque()
    last_dep = 0
    push = heapq.heappush
    pop = heapq.heappop

    def transmit(fl: _Flow, seq: int, t: int) -> None:
        nonlocal last_dep
        while q_dep and q_dep[0] <= t:
            q_dep.popleft()
            delivered[q_own.popleft()] += 1
        i = fl.idx
        sent[i] += 1
        fl.in_flight += 1
        dep = (t if t > last_dep else last_dep) + svc
        if len(q_dep) >= buf:
            dropped[i] += 1
            push(heap, (dep + 2 * prop, fl.fid, seq, _LOSS, i))
            return
        last_dep = dep
        q_dep.append(dep)
        q_own.append(i)
        owd = dep + prop - t + rx_offset
        push(heap, (dep + 2 * prop, fl.fid, seq, _ACK, i, t, owd))

    def pump(fl: _Flow, t: int) -> None:
        cap = int(fl.state.cwnd) + fl.bonus
        while fl.in_flight < cap:
            seq = fl.next_seq
            fl.next_seq = seq + 1
            transmit(fl, seq, t)

    def take_sample(k: int, t: int) -> None:
        while q_dep and q_dep[0] <= t:
            q_dep.popleft()
            delivered[q_own.popleft()] += 1
        queue_tr[k] = len(q_dep)
        deliv_tr[k] = delivered
        cwnd_tr[k] = [fl.state.cwnd if fl.started else 0.0 for fl in flows]

    if dur_ns == 0:
        heap.clear()  # a zero-length run does nothing, not even start flows
    k_next = 0
    next_sample = 0
    while heap:
        ev = heap[0]
        t = ev[0]
        if t > dur_ns:
            break
        while k_next < n_samples and next_sample < t:
            take_sample(k_next, next_sample)
            k_next += 1
            next_sample = k_next * dt_ns
        pop(heap)
        kind = ev[3]
        fl = flows[ev[4]]
        tsec = t / NS

        if kind == _ACK:
            fl.in_flight -= 1
            acked[fl.idx] += 1
            sample = DelaySample(ev[6] / NS, tsec, False, (t - ev[5]) / NS)
            evs = update_on_ack(fl.state, cfg, sample)
            for e in evs:
                decreases.append((tsec, fl.fid, e.kind, e.factor))
            if not pacing:
                if ev[2] >= fl.round_end:
                    _new_round(fl)
                pump(fl, t)
        elif kind == _LOSS:
            fl.in_flight -= 1
            losses.append((tsec, fl.fid))
            e = update_on_loss(fl.state, cfg, tsec)
            if e is not None:
                decreases.append((tsec, fl.fid, e.kind, e.factor))
            if not pacing:
                if ev[2] >= fl.round_end:
                    _new_round(fl)
                pump(fl, t)
        elif kind == _SEND:
            transmit(fl, ev[2], t)
        elif kind == _ROUND:
            _new_round(fl)
            n_round = int(fl.state.cwnd) + fl.bonus
            rtt = rtt_estimate(fl.state, cfg)
            rtt_ns = max(1, round(rtt * NS))
            last = -1
            for off in pacing_schedule(fl.state, cfg, rtt, n_round):
                off_ns = max(round(off * NS), last + 1)
                last = off_ns
                seq = fl.next_seq
                fl.next_seq = seq + 1
                push(heap, (t + off_ns, fl.fid, seq, _SEND, fl.idx))
            push(heap, (t + max(rtt_ns, last + 1), fl.fid, -1, _ROUND, fl.idx))
        else:  # _START
            fl.started = True
            if pacing:
                push(heap, (t, fl.fid, -1, _ROUND, fl.idx))
            else:
                pump(fl, t)
        if len(heap) > max_pending:
            raise SimulationError(
                f"event queue exceeded {max_pending} pending events at t={tsec:.3f}s")

    while k_next < n_samples:
        take_sample(k_next, next_sample)
        k_next += 1
        next_sample = k_next * dt_ns
    while q_dep and q_dep[0] <= dur_ns:
        q_dep.popleft()
        delivered[q_own.popleft()] += 1

    in_queue = [0] * n
    for i in q_own:
        in_queue[i] += 1
    return SimTrace(
        times=times,
        flow_ids=flow_ids,
        start_times=list(starts),
        cwnd=cwnd_tr,
        delivered=deliv_tr,
        queue=queue_tr,
        losses=losses,
        decreases=decreases,
        sent=np.array(sent, dtype=np.int64),
        dropped=np.array(dropped, dtype=np.int64),
        in_queue=np.array(in_queue, dtype=np.int64),
        acked=np.array(acked, dtype=np.int64),
        delivered_total=np.array(delivered, dtype=np.int64),
        capacity_pps=scenario.capacity_pps,
        duration=scenario.duration,
        sample_interval=scenario.sample_interval,
        packet_size=scenario.packet_size,
    )
