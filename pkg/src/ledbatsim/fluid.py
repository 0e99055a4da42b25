"""Fluid model of N LEDBAT flows with per-flow base-delay errors.

Each window follows ``dW_i/dt = (1/R) (tau - q_i) / tau`` where ``q_i`` is the
queuing delay flow ``i`` believes it sees: the true queue minus its base-delay
overestimate ``e_i``. The queue integrates the aggregate sending rate minus
capacity and is clipped to ``[0, B]``. Loss is not modelled; the regime of
interest has ``N < B / (tau C)`` so the buffer never fills.

``R`` is the round trip without queuing. The aggregate rate is
``sum W / (R + q/C)``; with ``variable_rtt`` the window law uses that same
round trip, which is what a per-ack sender actually sees.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

WINDOW_FLOOR = 1e-3


class FluidError(ValueError):
    pass


@dataclass(frozen=True)
class FluidSystem:
    windows: Tuple[float, ...]            # W_i at t_start, packets
    base_delay_error: Tuple[float, ...]   # e_i, seconds
    rtt_R: float = 0.05125
    target_tau: float = 0.025
    capacity_C: float = 800.0
    buffer_B: float = 100.0
    queue: float = 0.0                    # packets at t_start
    step_h: float = 0.001
    t_start: float = 0.0                  # time the last flow joined (t_N)
    window_floor: float = WINDOW_FLOOR
    # use R + q/C instead of R in the window law as well (packet-level comparisons)
    variable_rtt: bool = False

    def __post_init__(self):
        object.__setattr__(self, "windows", tuple(float(w) for w in self.windows))
        object.__setattr__(self, "base_delay_error", tuple(float(e) for e in self.base_delay_error))

    @property
    def n_flows(self) -> int:
        return len(self.windows)

    def validate(self) -> None:
        n = self.n_flows
        if n < 1:
            raise FluidError("need at least one flow")
        if len(self.base_delay_error) != n:
            raise FluidError("base_delay_error and windows differ in length")
        if min(self.rtt_R, self.target_tau, self.capacity_C, self.buffer_B) <= 0:
            raise FluidError("rtt_R, target_tau, capacity_C and buffer_B must be positive")
        hi = (n - 1) * self.target_tau
        for e in self.base_delay_error:
            if not -1e-12 <= e <= hi + 1e-12:
                raise FluidError(f"base-delay error {e} outside [0, (N-1)tau] = [0, {hi}]")
        if not 0 <= self.queue <= self.buffer_B:
            raise FluidError(f"queue {self.queue} outside [0, {self.buffer_B}]")
        if not 0 < self.step_h <= self.rtt_R / 10:
            raise FluidError(f"step_h {self.step_h} must be in (0, R/10 = {self.rtt_R / 10}]")
        if any(w < 0 for w in self.windows):
            raise FluidError("windows must be non-negative")

    @property
    def precondition_holds(self) -> bool:
        """``N < B / (tau C)``: the buffer can hold every flow's target."""
        return self.n_flows < self.buffer_B / (self.target_tau * self.capacity_C)


def staggered_errors(n: int, tau: float) -> Tuple[float, ...]:
    """Base-delay errors (0, tau, 2 tau, ...) for flows arriving one after another."""
    return tuple(i * tau for i in range(n))


@dataclass
class FluidTrace:
    times: np.ndarray     # (S,)
    windows: np.ndarray   # (S, N)
    queue: np.ndarray     # (S,) packets
    qdelay: np.ndarray    # (S, N) per-flow perceived queuing delay, seconds

    def index_at(self, t: float) -> int:
        if not self.times[0] - 1e-12 <= t <= self.times[-1] + 1e-12:
            raise FluidError(f"t={t} outside trace [{self.times[0]}, {self.times[-1]}]")
        return int(np.argmin(np.abs(self.times - t)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "flow_id", "W", "q_i"])
            for k, t in enumerate(self.times):
                for i in range(self.windows.shape[1]):
                    w.writerow([repr(float(t)), i + 1, repr(float(self.windows[k, i])),
                                repr(float(self.qdelay[k, i]))])


def perceived_delay(queue: float, errors: np.ndarray, capacity: float) -> np.ndarray:
    return np.maximum(0.0, queue - errors * capacity) / capacity


def integrate(sys: FluidSystem, t_end: float) -> FluidTrace:
    """Explicit Euler integration from ``sys.t_start`` to ``t_end``."""
    sys.validate()
    if not t_end > sys.t_start:
        raise FluidError(f"t_end {t_end} must exceed t_start {sys.t_start}")
    h = sys.step_h
    n_steps = int(math.ceil((t_end - sys.t_start) / h - 1e-9))
    R, tau, C, B = sys.rtt_R, sys.target_tau, sys.capacity_C, sys.buffer_B
    e = np.asarray(sys.base_delay_error)

    times = sys.t_start + h * np.arange(n_steps + 1)
    W_tr = np.empty((n_steps + 1, sys.n_flows))
    q_tr = np.empty(n_steps + 1)
    qi_tr = np.empty((n_steps + 1, sys.n_flows))

    W = np.asarray(sys.windows, dtype=float).copy()
    q = float(sys.queue)
    for k in range(n_steps + 1):
        qi = perceived_delay(q, e, C)
        W_tr[k] = W
        q_tr[k] = q
        qi_tr[k] = qi
        if k == n_steps:
            break
        # sending rate uses the RTT inflated by queuing, which damps the loop
        rtt = R + q / C
        dW = (tau - qi) / ((rtt if sys.variable_rtt else R) * tau)
        dq = W.sum() / rtt - C
        if (q <= 0.0 and dq < 0.0) or (q >= B and dq > 0.0):
            dq = 0.0
        W = np.maximum(W + h * dW, sys.window_floor)
        q = min(B, max(0.0, q + h * dq))
    return FluidTrace(times, W_tr, q_tr, qi_tr)


def d_max(trace: FluidTrace, t: float) -> float:
    """Largest pairwise window difference at the sample nearest ``t``."""
    w = trace.windows[trace.index_at(t)]
    return float(w.max() - w.min())


def t_star(sys: FluidSystem, windows_at_tN: Optional[Sequence[float]] = None) -> float:
    """Time after which the initial window gap guarantees lasting unfairness."""
    w = np.asarray(sys.windows if windows_at_tN is None else windows_at_tN, dtype=float)
    n = w.size
    if not sys.precondition_holds:
        raise FluidError(
            f"precondition N < B/(tau C) fails: N={n}, B/(tau C)={sys.buffer_B / (sys.target_tau * sys.capacity_C):g}")
    gap = float(w.max() - w.min())
    if not gap > 0:
        raise FluidError("precondition d_max(t_N) > 0 fails: all windows are equal")
    return sys.t_start + sys.rtt_R * gap / (n - 1)


@dataclass
class Verdict:
    applicable: bool
    holds: Optional[bool]
    t_star: Optional[float] = None
    t_star_grid: Optional[float] = None
    min_dmax_after: Optional[float] = None
    final_dmax: Optional[float] = None
    reason: str = ""

    def to_text(self) -> str:
        lines = [f"applicable = {str(self.applicable).lower()}",
                 f"holds = {'n/a' if self.holds is None else str(self.holds).lower()}"]
        for key in ("t_star", "t_star_grid", "min_dmax_after", "final_dmax"):
            val = getattr(self, key)
            if val is not None:
                lines.append(f"{key} = {val!r}")
        if self.reason:
            lines.append(f"reason = {self.reason}")
        return "\n".join(lines) + "\n"


def check_proposition(sys: FluidSystem, t_end: float) -> Verdict:
    """Integrate and test that the window gap stays positive after t*."""
    sys.validate()
    try:
        ts = t_star(sys)
    except FluidError as exc:
        return Verdict(applicable=False, holds=None, reason=str(exc))
    if ts >= t_end:
        return Verdict(applicable=False, holds=None, t_star=ts,
                       reason=f"t* = {ts:g} is not before t_end = {t_end:g}")
    trace = integrate(sys, t_end)
    after = trace.times > ts
    gaps = trace.windows.max(axis=1) - trace.windows.min(axis=1)
    first = int(np.argmax(after))
    return Verdict(
        applicable=True,
        holds=bool(np.all(gaps[after] > 0)),
        t_star=ts,
        t_star_grid=float(trace.times[first]),
        min_dmax_after=float(gaps[after].min()),
        final_dmax=float(gaps[-1]),
    )
