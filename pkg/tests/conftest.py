import numpy as np
import pytest

from ledbatsim import fastsim, netsim


def check_invariants(trace, scenario):
    """Conservation, queue bound, work conservation and capacity bound."""
    assert np.array_equal(trace.sent, trace.delivered_total + trace.dropped + trace.in_queue)
    assert np.all(trace.acked <= trace.delivered_total)
    if len(trace.times) == 0:
        return
    assert trace.queue.min() >= 0 and trace.queue.max() <= scenario.buffer_pkts
    assert np.all(np.diff(trace.delivered, axis=0) >= 0)
    assert np.all(trace.rates() >= 0)
    assert np.all(trace.cwnd[trace.cwnd > 0] >= scenario.controller.min_cwnd)
    total = trace.delivered.sum(axis=1)
    svc = round(netsim.NS / scenario.capacity_pps)
    t_ns = np.round(trace.times * netsim.NS).astype(np.int64)
    assert np.all(total <= t_ns // svc + 1)
    # a backlog at one sample drains at line rate over the next interval
    per_dt = np.diff(total)
    drain = np.minimum(trace.queue[:-1], scenario.capacity_pps * scenario.sample_interval)
    assert np.all(per_dt >= drain - 1)
    assert trace.delivered_total.sum() <= scenario.capacity_pps * scenario.duration + 1


def _checked(run):
    def wrapped(scenario):
        trace = run(scenario)
        check_invariants(trace, scenario)
        return trace
    return wrapped


_RAW_RUN = {netsim: netsim.run, fastsim: fastsim.run}


@pytest.fixture(autouse=True)
def _invariants_on_every_run(monkeypatch):
    # every simulation in the suite, including CLI and sweep paths, is checked
    for mod, run in _RAW_RUN.items():
        monkeypatch.setattr(mod, "run", _checked(run))


def simulate(scenario, engine="fast"):
    run = fastsim.run if engine == "fast" and fastsim.available() else netsim.run
    return run(scenario)


@pytest.fixture
def sim():
    return simulate


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
