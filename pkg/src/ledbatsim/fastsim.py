"""Compiled twin of :func:`ledbatsim.netsim.run` for large sweeps.

The event loop, controller arithmetic and random streams are transcribed
operation for operation, so traces are bit-identical to the reference
engine (the test suite checks this for every variant). The reference engine
stays the readable source of truth; change both together.

Set ``LEDBATSIM_ENGINE=python`` to force the reference engine.
"""
from __future__ import annotations

import math
import os

import numpy as np

from .controller import RANDOM_DROP_FACTOR, Variant
from .netsim import NS, Scenario, SimTrace, SimulationError
from .seeding import flow_seed

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

_VARIANT_CODE = {
    Variant.PLAIN: 0, Variant.RANDOM_PACING: 1, Variant.SLOW_START: 2,
    Variant.RANDOM_DROP: 3, Variant.MULT_DECREASE: 4,
}
_DEC_KINDS = ("loss", "random_drop", "beta_drop")


def available() -> bool:
    return numba is not None and os.environ.get("LEDBATSIM_ENGINE", "") != "python"


if numba is not None:
    _u64 = np.uint64
    _GOLDEN = _u64(0x9E3779B97F4A7C15)
    _M1 = _u64(0xBF58476D1CE4E5B9)
    _M2 = _u64(0x94D049BB133111EB)
    _S30, _S27, _S31, _S11 = _u64(30), _u64(27), _u64(31), _u64(11)

    @numba.njit(cache=True, inline="always")
    def _rand(states, i):
        s = states[i] + _GOLDEN
        states[i] = s
        z = (s ^ (s >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        z = z ^ (z >> _S31)
        return float(z >> _S11) * (1.0 / 9007199254740992.0)

    @numba.njit(cache=True, inline="always")
    def _less(H, a, b):
        for c in range(4):
            if H[a, c] != H[b, c]:
                return H[a, c] < H[b, c]
        return False

    @numba.njit(cache=True)
    def _swap(H, a, b):
        for c in range(7):
            tmp = H[a, c]
            H[a, c] = H[b, c]
            H[b, c] = tmp

    @numba.njit(cache=True)
    def _push(H, size, t, fid, seq, kind, idx, tx, owd):
        if size == H.shape[0]:
            H2 = np.empty((2 * H.shape[0], 7), dtype=np.int64)
            H2[:size] = H[:size]
            H = H2
        H[size, 0] = t
        H[size, 1] = fid
        H[size, 2] = seq
        H[size, 3] = kind
        H[size, 4] = idx
        H[size, 5] = tx
        H[size, 6] = owd
        j = size
        while j > 0:
            p = (j - 1) >> 1
            if _less(H, j, p):
                _swap(H, j, p)
                j = p
            else:
                break
        return H, size + 1

    @numba.njit(cache=True)
    def _pop(H, size):
        size -= 1
        # the popped row is parked at index ``size`` for the caller to read
        _swap(H, 0, size)
        j = 0
        while True:
            l = 2 * j + 1
            if l >= size:
                break
            m = l
            r = l + 1
            if r < size and _less(H, r, l):
                m = r
            if _less(H, m, j):
                _swap(H, m, j)
                j = m
            else:
                break
        return size

    @numba.njit(cache=True)
    def _grow_log(L, n):
        if n == L.shape[0]:
            L2 = np.empty((2 * L.shape[0], L.shape[1]), dtype=np.int64)
            L2[:n] = L[:n]
            return L2
        return L

    @numba.njit(cache=True)
    def _engine(start_ns, fids, init_cwnd, rng_states, variant, tau, gain, p, beta,
                md_guard, min_cwnd, backoff, init_rtt, svc, prop, rx_offset, buf, dur_ns, dt_ns,
                max_pending):
        ACK, LOSS, START, SEND, ROUND = 0, 1, 2, 3, 4
        n = fids.shape[0]
        n_samples = dur_ns // dt_ns + 1 if dur_ns > 0 else 0
        cwnd_tr = np.zeros((n_samples, n))
        deliv_tr = np.zeros((n_samples, n), dtype=np.int64)
        queue_tr = np.zeros(n_samples, dtype=np.int64)

        sent = np.zeros(n, dtype=np.int64)
        dropped = np.zeros(n, dtype=np.int64)
        acked = np.zeros(n, dtype=np.int64)
        delivered = np.zeros(n, dtype=np.int64)

        cwnd = init_cwnd.copy()
        base = np.full(n, np.inf)
        in_ss = np.zeros(n, dtype=np.bool_)
        last_dec = np.full(n, -np.inf)
        rtt = np.full(n, np.nan)
        next_seq = np.zeros(n, dtype=np.int64)
        in_flight = np.zeros(n, dtype=np.int64)
        round_end = np.zeros(n, dtype=np.int64)
        bonus = np.zeros(n, dtype=np.int64)
        carry = np.zeros(n)
        started = np.zeros(n, dtype=np.bool_)
        if variant == 2:
            in_ss[:] = True
        pacing = variant == 1
        states = rng_states.copy()

        loss_log = np.empty((64, 2), dtype=np.int64)
        n_loss = 0
        dec_log = np.empty((64, 3), dtype=np.int64)
        n_dec = 0

        H = np.empty((max(16, 4 * n), 7), dtype=np.int64)
        size = 0
        for i in range(n):
            H, size = _push(H, size, start_ns[i], fids[i], -1, START, i, 0, 0)

        qcap = buf + 1
        q_dep = np.empty(qcap, dtype=np.int64)
        q_own = np.empty(qcap, dtype=np.int64)
        q_head = 0
        q_len = 0
        last_dep = 0
        draws = np.empty(16)

        k_next = 0
        next_sample = 0
        err_t = -1
        if dur_ns == 0:
            size = 0
        while size > 0:
            t = H[0, 0]
            if t > dur_ns:
                break
            while k_next < n_samples and next_sample < t:
                while q_len > 0 and q_dep[q_head] <= next_sample:
                    delivered[q_own[q_head]] += 1
                    q_head = (q_head + 1) % qcap
                    q_len -= 1
                queue_tr[k_next] = q_len
                deliv_tr[k_next] = delivered
                for j in range(n):
                    cwnd_tr[k_next, j] = cwnd[j] if started[j] else 0.0
                k_next += 1
                next_sample = k_next * dt_ns
            size = _pop(H, size)
            fid = H[size, 1]
            seq = H[size, 2]
            kind = H[size, 3]
            i = H[size, 4]
            ev_tx = H[size, 5]
            ev_owd = H[size, 6]
            tsec = t / NS

            n_send = 0  # packets to transmit now: -1 means pump to the window
            if kind == ACK:
                in_flight[i] -= 1
                acked[i] += 1
                owd = ev_owd / NS
                if owd < base[i]:
                    base[i] = owd
                q = np.rint((owd - base[i]) / 1e-9) * 1e-9
                rtt[i] = (t - ev_tx) / NS
                r_est = rtt[i]
                w = cwnd[i]
                if variant == 2 and in_ss[i]:
                    w += 1.0
                elif variant == 4:
                    if q > tau:
                        if not md_guard or tsec - last_dec[i] >= r_est:
                            w *= beta
                            last_dec[i] = tsec
                            dec_log = _grow_log(dec_log, n_dec)
                            dec_log[n_dec, 0] = t
                            dec_log[n_dec, 1] = i
                            dec_log[n_dec, 2] = 2
                            n_dec += 1
                    else:
                        w += gain * (tau - q) / w
                else:
                    w += gain * (tau - q) / w
                    if variant == 3:
                        if w < min_cwnd:
                            w = min_cwnd
                        if _rand(states, i) < p:
                            w *= 0.5
                            dec_log = _grow_log(dec_log, n_dec)
                            dec_log[n_dec, 0] = t
                            dec_log[n_dec, 1] = i
                            dec_log[n_dec, 2] = 1
                            n_dec += 1
                cwnd[i] = w if w > min_cwnd else min_cwnd
                if not pacing:
                    n_send = -1
            elif kind == LOSS:
                in_flight[i] -= 1
                loss_log = _grow_log(loss_log, n_loss)
                loss_log[n_loss, 0] = t
                loss_log[n_loss, 1] = i
                n_loss += 1
                in_ss[i] = False
                r_est = rtt[i] if not np.isnan(rtt[i]) else init_rtt
                if not tsec - last_dec[i] < r_est:
                    cwnd[i] = max(min_cwnd, cwnd[i] * backoff)
                    last_dec[i] = tsec
                    dec_log = _grow_log(dec_log, n_dec)
                    dec_log[n_dec, 0] = t
                    dec_log[n_dec, 1] = i
                    dec_log[n_dec, 2] = 0
                    n_dec += 1
                if not pacing:
                    n_send = -1
            elif kind == SEND:
                n_send = 1
            elif kind == ROUND:
                w = cwnd[i]
                carry[i] += w - math.floor(w)
                if carry[i] >= 1.0:
                    carry[i] -= 1.0
                    bonus[i] = 1
                else:
                    bonus[i] = 0
                round_end[i] = next_seq[i]
                n_round = int(cwnd[i]) + bonus[i]
                r_est = rtt[i] if not np.isnan(rtt[i]) else init_rtt
                rtt_ns = max(1, np.int64(np.rint(r_est * NS)))
                if draws.shape[0] < n_round:
                    draws = np.empty(2 * n_round)
                for m in range(n_round - 1):
                    draws[m] = r_est * (1.0 - _rand(states, i))
                d = np.sort(draws[:n_round - 1])
                last = np.int64(-1)
                prev = 0.0
                for m in range(n_round):
                    if m == 0:
                        off = 0.0
                    else:
                        off = d[m - 1] if d[m - 1] > prev else np.nextafter(prev, np.inf)
                    prev = off
                    off_ns = max(np.int64(np.rint(off * NS)), last + 1)
                    last = off_ns
                    s = next_seq[i]
                    next_seq[i] = s + 1
                    H, size = _push(H, size, t + off_ns, fid, s, SEND, i, 0, 0)
                H, size = _push(H, size, t + max(rtt_ns, last + 1), fid, -1, ROUND, i, 0, 0)
            else:  # START
                started[i] = True
                if pacing:
                    H, size = _push(H, size, t, fid, -1, ROUND, i, 0, 0)
                else:
                    n_send = -2

            if n_send != 0:
                if n_send == -1 and seq >= round_end[i]:
                    w = cwnd[i]
                    carry[i] += w - math.floor(w)
                    if carry[i] >= 1.0:
                        carry[i] -= 1.0
                        bonus[i] = 1
                    else:
                        bonus[i] = 0
                    round_end[i] = next_seq[i]
                cap = int(cwnd[i]) + bonus[i]
                while True:
                    if n_send == 1:
                        s = seq
                    else:
                        if in_flight[i] >= cap:
                            break
                        s = next_seq[i]
                        next_seq[i] = s + 1
                    # transmit packet s of flow i at time t
                    while q_len > 0 and q_dep[q_head] <= t:
                        delivered[q_own[q_head]] += 1
                        q_head = (q_head + 1) % qcap
                        q_len -= 1
                    sent[i] += 1
                    in_flight[i] += 1
                    dep = (t if t > last_dep else last_dep) + svc
                    if q_len >= buf:
                        dropped[i] += 1
                        H, size = _push(H, size, dep + 2 * prop, fid, s, LOSS, i, 0, 0)
                    else:
                        last_dep = dep
                        tail = (q_head + q_len) % qcap
                        q_dep[tail] = dep
                        q_own[tail] = i
                        q_len += 1
                        H, size = _push(H, size, dep + 2 * prop, fid, s, ACK, i, t,
                                        dep + prop - t + rx_offset)
                    if n_send == 1:
                        break
            if size > max_pending:
                err_t = t
                break

        if err_t < 0:
            while k_next < n_samples:
                while q_len > 0 and q_dep[q_head] <= next_sample:
                    delivered[q_own[q_head]] += 1
                    q_head = (q_head + 1) % qcap
                    q_len -= 1
                queue_tr[k_next] = q_len
                deliv_tr[k_next] = delivered
                for j in range(n):
                    cwnd_tr[k_next, j] = cwnd[j] if started[j] else 0.0
                k_next += 1
                next_sample = k_next * dt_ns
            while q_len > 0 and q_dep[q_head] <= dur_ns:
                delivered[q_own[q_head]] += 1
                q_head = (q_head + 1) % qcap
                q_len -= 1
        in_queue = np.zeros(n, dtype=np.int64)
        for m in range(q_len):
            in_queue[q_own[(q_head + m) % qcap]] += 1
        return (err_t, cwnd_tr, deliv_tr, queue_tr, sent, dropped, in_queue, acked,
                delivered, loss_log[:n_loss].copy(), dec_log[:n_dec].copy())


def run(scenario: Scenario) -> SimTrace:
    """Same contract and output as :func:`ledbatsim.netsim.run`."""
    if numba is None:
        raise SimulationError("numba is not installed; use ledbatsim.netsim.run")
    scenario.validate()
    cfg = scenario.controller
    flows = scenario.flows
    n = len(flows)
    fids = np.array([f.flow_id for f in flows], dtype=np.int64)
    start_ns = np.array([round(f.start_time * NS) for f in flows], dtype=np.int64)
    init = np.array([cfg.init_cwnd if f.initial_cwnd is None else float(f.initial_cwnd)
                     for f in flows], dtype=float)
    rng = np.array([flow_seed(scenario.seed, f.flow_id) for f in flows], dtype=np.uint64)
    dur_ns = round(scenario.duration * NS)
    dt_ns = round(scenario.sample_interval * NS)
    factor_of = (cfg.loss_backoff, RANDOM_DROP_FACTOR, cfg.beta)

    (err_t, cwnd_tr, deliv_tr, queue_tr, sent, dropped, in_queue, acked, delivered,
     loss_log, dec_log) = _engine(
        start_ns, fids, init, rng, _VARIANT_CODE[cfg.variant], cfg.target_tau, cfg.gain,
        cfg.drop_prob_p if cfg.drop_prob_p is not None else 0.0,
        cfg.beta if cfg.beta is not None else 0.0, bool(cfg.md_guard),
        cfg.min_cwnd, cfg.loss_backoff, cfg.init_rtt,
        round(NS / scenario.capacity_pps), round(scenario.prop_delay * NS),
        round(scenario.receiver_offset * NS), scenario.buffer_pkts, dur_ns, dt_ns,
        scenario.max_pending_events)
    if err_t >= 0:
        raise SimulationError(
            f"event queue exceeded {scenario.max_pending_events} pending events at t={err_t / NS:.3f}s")
    n_samples = dur_ns // dt_ns + 1 if dur_ns > 0 else 0
    fid_list = fids.tolist()
    return SimTrace(
        times=np.arange(n_samples, dtype=np.int64) * dt_ns / NS,
        flow_ids=fid_list,
        start_times=scenario.start_times,
        cwnd=cwnd_tr,
        delivered=deliv_tr,
        queue=queue_tr,
        losses=[(int(t) / NS, fid_list[i]) for t, i in loss_log],
        decreases=[(int(t) / NS, fid_list[i], _DEC_KINDS[k], factor_of[k]) for t, i, k in dec_log],
        sent=sent, dropped=dropped, in_queue=in_queue, acked=acked, delivered_total=delivered,
        capacity_pps=scenario.capacity_pps,
        duration=scenario.duration,
        sample_interval=scenario.sample_interval,
        packet_size=scenario.packet_size,
    )
