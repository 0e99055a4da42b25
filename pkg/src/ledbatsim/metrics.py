"""Efficiency, Jain fairness and replication statistics over simulation traces."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .netsim import Scenario, SimTrace


class MetricsError(ValueError):
    pass


@dataclass
class MetricsReport:
    eta: float
    jain_long: float
    per_flow_rate: List[float]
    n_flows: int
    window: Tuple[float, float]
    jain_short: List[Tuple[float, float]] = field(default_factory=list)


def jain(rates: Sequence[float]) -> float:
    """Jain's index (sum x)^2 / (N sum x^2); NaN when every rate is zero."""
    x = np.asarray(rates, dtype=float)
    if x.size == 0:
        raise MetricsError("jain index needs at least one rate")
    if np.any(x < 0):
        raise MetricsError(f"rates must be non-negative, got {x.tolist()}")
    m = float(x.max())
    if m == 0.0:
        return math.nan
    # scale by the max so tiny or huge rates neither underflow nor overflow
    x = x / m
    sq = float(np.dot(x, x))
    s = float(x.sum())
    f = s * s / (x.size * sq)
    # guard against round-off just outside [1/N, 1]
    return min(1.0, max(1.0 / x.size, f))


def measurement_window(trace: SimTrace) -> Tuple[float, float]:
    """Default long-term window: from the last flow's start to the end of the run."""
    start = max(trace.start_times) if trace.start_times else 0.0
    return start, trace.duration


def _check_window(trace: SimTrace, window) -> Tuple[float, float]:
    t0, t1 = window if window is not None else measurement_window(trace)
    if not t1 > t0:
        raise MetricsError(f"empty measurement window [{t0}, {t1}]")
    if len(trace.times) == 0 or t0 < 0 or t1 > trace.duration + 1e-9:
        raise MetricsError(f"window [{t0}, {t1}] outside the trace [0, {trace.duration}]")
    return t0, t1


def efficiency(trace: SimTrace, scenario: Optional[Scenario] = None, window=None) -> float:
    """Packets through the bottleneck in ``window`` over what the link could carry."""
    t0, t1 = _check_window(trace, window)
    capacity = scenario.capacity_pps if scenario is not None else trace.capacity_pps
    if trace.n_flows == 0:
        return 0.0
    delivered = trace.delivered_between(t0, t1).sum()
    span = trace.times[trace.index_at(t1)] - trace.times[trace.index_at(t0)]
    return float(delivered / (capacity * span))


def flow_rates(trace: SimTrace, window=None) -> np.ndarray:
    t0, t1 = _check_window(trace, window)
    span = trace.times[trace.index_at(t1)] - trace.times[trace.index_at(t0)]
    return trace.delivered_between(t0, t1) / span


def jain_long(trace: SimTrace, window=None) -> float:
    return jain(flow_rates(trace, window))


def jain_short_term(trace: SimTrace, window_len: float = 5.0,
                    stride: float = 1.0) -> List[Tuple[float, float]]:
    """Jain index over sliding windows, counting only flows already started."""
    if window_len > trace.duration:
        raise MetricsError(f"window_len {window_len} exceeds run duration {trace.duration}")
    starts = np.asarray(trace.start_times)
    out = []
    t = 0.0
    while t + window_len <= trace.duration + 1e-9:
        active = starts <= t + 1e-12
        if active.any():
            d = trace.delivered_between(t, t + window_len)[active]
            if d.any():
                out.append((t, jain(d / window_len)))
        t = round(t + stride, 9)
    return out


def report(trace: SimTrace, window=None, short_window: float = 5.0,
           short_stride: float = 1.0) -> MetricsReport:
    t0, t1 = _check_window(trace, window)
    rates = flow_rates(trace, (t0, t1))
    jl = jain(rates) if trace.n_flows else math.nan
    short = jain_short_term(trace, short_window, short_stride) if trace.duration >= short_window else []
    return MetricsReport(
        eta=efficiency(trace, window=(t0, t1)),
        jain_long=jl,
        per_flow_rate=rates.tolist(),
        n_flows=trace.n_flows,
        window=(t0, t1),
        jain_short=short,
    )


_SCALARS = ("eta", "jain_long")


def aggregate(reports: Sequence[MetricsReport]) -> Dict[str, Tuple[float, float]]:
    """Sample mean and unbiased variance of each scalar metric.

    A single report has variance 0 by convention.
    """
    if not reports:
        raise MetricsError("aggregate needs at least one report")
    out = {}
    for name in _SCALARS:
        vals = np.array([getattr(r, name) for r in reports], dtype=float)
        mean = float(vals.mean())
        var = float(vals.var(ddof=1)) if vals.size > 1 else 0.0
        out[name] = (mean, var)
    return out
