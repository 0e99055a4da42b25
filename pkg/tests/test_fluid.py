import numpy as np
import pytest

from ledbatsim import fluid, metrics
from ledbatsim.fluid import FluidError, FluidSystem, FluidTrace, check_proposition, integrate
from ledbatsim.netsim import Scenario

from conftest import simulate

TAU, C, B = 0.025, 800.0, 100.0


def two_flow(**kw):
    base = dict(windows=(20.0, 2.0), base_delay_error=(0.0, TAU), queue=20.0)
    base.update(kw)
    return FluidSystem(**base)


def test_single_flow_converges_to_target_queue():
    tr = integrate(FluidSystem(windows=(2.0,), base_delay_error=(0.0,)), 60.0)
    assert tr.queue[-1] == pytest.approx(TAU * C, abs=0.1)
    assert tr.qdelay[-1, 0] == pytest.approx(TAU, abs=1e-4)


def test_late_comer_starves_first_flow():
    tr = integrate(two_flow(), 30.0)
    assert tr.windows[-1, 0] == pytest.approx(fluid.WINDOW_FLOOR)
    assert tr.windows[-1, 1] > 50
    k = tr.index_at(5.0)
    assert np.all(tr.windows[k:, 1] > tr.windows[k:, 0])


def test_zero_drift_keeps_windows():
    # queue held at exactly tau*C for one flow: tau - q_i = 0 and the aggregate
    # rate equals capacity, so nothing moves
    R = 0.05
    w = C * (R + TAU)
    tr = integrate(FluidSystem(windows=(w,), base_delay_error=(0.0,), rtt_R=R, queue=TAU * C), 5.0)
    assert np.allclose(tr.windows, w) and np.allclose(tr.queue, TAU * C)


def test_d_max_examples():
    tr = FluidTrace(times=np.array([0.0, 1.0]), windows=np.array([[5.0, 3.0, 1.0], [2.0, 2.0, 2.0]]),
                    queue=np.zeros(2), qdelay=np.zeros((2, 3)))
    assert fluid.d_max(tr, 0.0) == 4.0
    assert fluid.d_max(tr, 1.0) == 0.0
    with pytest.raises(FluidError):
        fluid.d_max(tr, 2.0)


def test_d_max_positive_late():
    assert fluid.d_max(integrate(two_flow(), 30.0), 29.0) > 0


def test_t_star_formula():
    sys = FluidSystem(windows=(7.0, 2.0), base_delay_error=(0.0, TAU), rtt_R=0.1, t_start=10.0,
                      step_h=0.01)
    assert fluid.t_star(sys) == pytest.approx(10.5)


def test_t_star_zero_gap_rejected():
    with pytest.raises(FluidError):
        fluid.t_star(FluidSystem(windows=(3.0, 3.0), base_delay_error=(0.0, 0.0)))


def test_precondition():
    assert two_flow().precondition_holds  # 2 < 100 / 20
    five = FluidSystem(windows=(1.0,) * 5, base_delay_error=fluid.staggered_errors(5, TAU))
    assert not five.precondition_holds
    assert not check_proposition(five, 10.0).applicable


def test_check_proposition_two_flow():
    v = check_proposition(two_flow(), 30.0)
    assert v.applicable and v.holds
    assert abs(v.t_star_grid - v.t_star) <= two_flow().step_h
    assert v.min_dmax_after > 0


def test_check_proposition_identical_flows_not_applicable():
    v = check_proposition(FluidSystem(windows=(4.0, 4.0), base_delay_error=(0.0, 0.0)), 10.0)
    assert not v.applicable and v.holds is None
    assert "holds = n/a" in v.to_text()


def test_check_proposition_three_staggered():
    sys = FluidSystem(windows=(30.0, 10.0, 2.0), base_delay_error=fluid.staggered_errors(3, TAU),
                      queue=40.0)
    v = check_proposition(sys, 30.0)
    assert v.applicable and v.holds


@pytest.mark.parametrize("kw", [
    dict(step_h=0.01),                       # above R/10
    dict(base_delay_error=(0.0, 0.05)),      # above (N-1) tau
    dict(base_delay_error=(0.0,)),
    dict(queue=150.0),
    dict(windows=(-1.0, 2.0)),
])
def test_invalid_systems(kw):
    with pytest.raises(FluidError):
        integrate(two_flow(**kw), 1.0)


def test_step_halving_converges():
    a = integrate(two_flow(), 20.0)
    b = integrate(two_flow(step_h=0.0005), 20.0)
    assert np.allclose(a.windows[-1], b.windows[-1], rtol=0.01)


def test_window_gap_matches_integrated_delay_difference():
    # W_i - W_j = gap(0) + integral of (q_j - q_i) / (R tau), while no floor is active
    sys = FluidSystem(windows=(30.0, 10.0, 2.0), base_delay_error=fluid.staggered_errors(3, TAU),
                      queue=40.0)
    tr = integrate(sys, 3.0)
    h, R = sys.step_h, sys.rtt_R
    for i, j in ((0, 1), (1, 2), (0, 2)):
        drift = (tr.qdelay[:-1, j] - tr.qdelay[:-1, i]) / (R * TAU)
        pred = (tr.windows[0, i] - tr.windows[0, j]) + np.concatenate([[0.0], np.cumsum(drift) * h])
        active = np.all(tr.windows > fluid.WINDOW_FLOOR, axis=1)
        got = tr.windows[:, i] - tr.windows[:, j]
        assert np.allclose(got[active], pred[active], atol=1e-9)
    # perceived delays never differ by more than (N-1) tau
    spread = tr.qdelay.max(axis=1) - tr.qdelay.min(axis=1)
    assert spread.max() <= 2 * TAU + 1e-12


def test_csv(tmp_path):
    tr = integrate(two_flow(), 0.01)
    tr.write_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "t,flow_id,W,q_i" and len(lines) == 1 + 2 * len(tr.times)


def crossing(times, gap):
    """First time the late-comer's window exceeds the first flow's."""
    k = int(np.argmax(gap > 0))
    assert gap[k] > 0
    return times[k]


def test_fluid_and_packet_agree_on_sign_after_t_star():
    tr = simulate(Scenario(duration=60.0).with_starts([0.0, 10.0]))
    k0 = tr.index_at(10.0)
    # R is the queue-free round trip: two propagation legs plus one service time
    R = 2 * 0.025 + 1 / tr.capacity_pps
    sys = FluidSystem(windows=tuple(tr.cwnd[k0]), base_delay_error=(0.0, TAU), rtt_R=R,
                      queue=float(tr.queue[k0]), t_start=10.0, variable_rtt=True)
    ts = fluid.t_star(sys)
    ft = integrate(sys, 60.0)
    fgap = ft.windows[:, 1] - ft.windows[:, 0]
    pgap = tr.cwnd[:, 1] - tr.cwnd[:, 0]
    t_f, t_p = crossing(ft.times, fgap), crossing(tr.times[k0:], pgap[k0:])
    rtt = R + tr.queue[k0:].mean() / tr.capacity_pps
    assert abs(t_f - t_p) < rtt
    lo, hi = min(t_f, t_p), max(t_f, t_p)
    ks = [k for k, t in enumerate(tr.times) if t > ts and not lo <= t < hi]
    assert len(ks) > 400
    for k in ks:
        assert np.sign(pgap[k]) == np.sign(fgap[ft.index_at(tr.times[k])]), tr.times[k]
    # once both have crossed, the late-comer stays ahead in both models
    assert np.all(pgap[tr.times >= hi] > 0) and np.all(fgap[ft.times >= hi] > 0)
