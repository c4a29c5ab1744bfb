"""SINR/rate arithmetic and transmit-buffer behavior.

noise_power and the 2x2 rate oracle are recomputed here from first
principles; the buffer drain is additionally cross-checked against the
vectorized counter kernel used by the episode loop (two independent
implementations of the same FIFO).
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subnetctl import linksim
from subnetctl.linksim import (DeliveryEvent, RadioParams, TransmitBuffer,
                               advance_buffers, freshest_delivery, noise_power,
                               rates)
from subnetctl.scenario import _drain_tti


def test_noise_power_reference_value():
    # k_B T B F = 1.380649e-23 * 290 * 3e6 * 10
    sigma2 = noise_power(RadioParams())
    assert sigma2 == pytest.approx(1.380649e-23 * 290 * 3e6 * 10, rel=1e-12)
    dbm = 10.0 * math.log10(sigma2 * 1e3)
    assert abs(dbm - (-99.2)) < 0.05


def test_noise_power_scalings():
    base = noise_power(RadioParams())
    assert noise_power(RadioParams(bandwidth_hz=6e6)) == pytest.approx(2 * base)
    assert noise_power(RadioParams(noise_figure_db=20.0)) == pytest.approx(10 * base)
    assert noise_power(RadioParams(temperature_k=580.0)) == pytest.approx(2 * base)


def test_spectral_efficiency_of_one_packet_per_tti():
    # 128 bytes in one 1-ms TTI over 3 MHz
    par = RadioParams()
    se = 1024.0 / (par.tti_s * par.bandwidth_hz)
    assert abs(se - 0.34) < 0.01


def test_params_validation():
    with pytest.raises(ValueError):
        RadioParams(bandwidth_hz=0.0)
    with pytest.raises(ValueError):
        RadioParams(tti_s=-1.0)


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------

def test_single_link_rate():
    g = 1e-10
    p = 1e-3
    sigma2 = noise_power(RadioParams())
    r = rates([p], np.array([[g]]))
    assert r[0] == pytest.approx(3e6 * math.log2(1 + p * g / sigma2), rel=1e-12)


def test_two_link_rate_oracle():
    """Hand-computed SINRs; G[m, n] is transmitter m -> receiver n."""
    G = np.array([[1e-9, 2e-11],
                  [5e-11, 8e-10]])
    p = np.array([1e-3, 5e-4])
    sigma2 = noise_power(RadioParams())
    sinr0 = p[0] * G[0, 0] / (p[1] * G[1, 0] + sigma2)
    sinr1 = p[1] * G[1, 1] / (p[0] * G[0, 1] + sigma2)
    r = rates(p, G)
    assert r[0] == pytest.approx(3e6 * math.log2(1 + sinr0), rel=1e-12)
    assert r[1] == pytest.approx(3e6 * math.log2(1 + sinr1), rel=1e-12)
    # removing the cross terms can only help
    r_free = rates(p, G, interference_free=True)
    assert np.all(r_free >= r)


def test_zero_power_zero_rate():
    G = np.full((3, 3), 1e-10)
    assert np.all(rates(np.zeros(3), G) == 0.0)


def test_active_set_masks_rate_and_interference():
    G = np.array([[1e-9, 1e-9], [1e-9, 1e-9]])  # brutal mutual interference
    p = np.array([1e-3, 1e-3])
    both = rates(p, G)
    only0 = rates(p, G, active=[0])
    assert only0[1] == 0.0
    assert only0[0] > both[0]          # link 1 silenced -> link 0 speeds up
    sigma2 = noise_power(RadioParams())
    assert only0[0] == pytest.approx(3e6 * math.log2(1 + 1e-3 * 1e-9 / sigma2))


def test_rates_power_box_validated():
    G = np.eye(2) * 1e-10
    with pytest.raises(ValueError):
        rates([2e-3, 0.0], G)
    with pytest.raises(ValueError):
        rates([-1e-6, 0.0], G)


def test_rates_accepts_complex_channel_objects():
    gains = np.array([[3e-5 + 4e-5j]])
    r1 = rates([1e-3], gains)
    r2 = rates([1e-3], np.abs(gains) ** 2)
    assert r1[0] == pytest.approx(r2[0], rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1.1, 10.0))
def test_more_interference_never_helps(seed, boost):
    """Raising one interferer's power cannot raise anyone else's rate."""
    rng = np.random.default_rng(seed)
    G = 10 ** rng.uniform(-12, -8, size=(3, 3))
    p = rng.uniform(1e-5, 1e-3 / boost, size=3)
    base = rates(p, G)
    p2 = p.copy()
    p2[0] *= boost
    bumped = rates(p2, G)
    assert np.all(bumped[1:] <= base[1:] + 1e-9)
    assert bumped[0] >= base[0]        # own power up, own rate up


def test_rates_permutation_equivariant():
    rng = np.random.default_rng(44)
    G = 10 ** rng.uniform(-12, -8, size=(5, 5))
    p = rng.uniform(0, 1e-3, size=5)
    perm = rng.permutation(5)
    r = rates(p, G)
    r_perm = rates(p[perm], G[np.ix_(perm, perm)])
    np.testing.assert_allclose(r_perm, r[perm], rtol=1e-12)


# ---------------------------------------------------------------------------
# buffers
# ---------------------------------------------------------------------------

def make_buf(period=2, capacity=None):
    return TransmitBuffer(subnetwork=0, period=period, packet_bits=1024.0,
                          capacity=capacity)


def test_generation_cadence():
    buf = make_buf(period=2)
    for now in range(6):
        buf.maybe_generate(now)
    assert [p.generated_at for p in buf.queue] == [0, 2, 4]
    assert buf.backlog_bits == 3 * 1024.0


def test_capacity_drops_oldest():
    buf = make_buf(period=2, capacity=2)
    for now in range(0, 10, 2):
        buf.maybe_generate(now)
    assert [p.generated_at for p in buf.queue] == [6, 8]


def test_one_packet_per_tti_at_1mbps():
    """1.024 Mb/s drains exactly one fresh packet within its generation TTI."""
    buf = make_buf()
    buf.maybe_generate(0)
    _, events = advance_buffers([buf], [1.024e6], now=0)
    assert len(events) == 1
    assert events[0].t_d == 0
    assert len(buf.queue) == 0


def test_partial_drain_then_delivery():
    buf = make_buf()
    buf.maybe_generate(0)
    _, ev = advance_buffers([buf], [512e3], now=0)
    assert ev == [] and buf.queue[0].remaining_bits == pytest.approx(512.0)
    _, ev = advance_buffers([buf], [512e3], now=1)
    assert len(ev) == 1 and ev[0].t_d == 1


def test_fast_link_clears_backlog_in_one_tti():
    buf = make_buf()
    for now in (0, 2, 4):
        buf.maybe_generate(now)
    _, events = advance_buffers([buf], [3.072e6], now=4)
    assert [e.generated_at for e in events] == [0, 2, 4]
    assert [e.t_d for e in events] == [4, 2, 0]
    assert len(buf.queue) == 0


def test_zero_rate_accumulates():
    buf = make_buf()
    for now in range(8):
        buf.maybe_generate(now)
        advance_buffers([buf], [0.0], now=now)
    assert buf.backlog_bits == 4 * 1024.0


def test_slot_fraction_scales_budget():
    buf = make_buf()
    buf.maybe_generate(0)
    advance_buffers([buf], [1.024e6], now=0, slot_fraction=0.5)
    assert buf.queue[0].remaining_bits == pytest.approx(512.0)


def test_bit_conservation_random_rates():
    rng = np.random.default_rng(17)
    bufs = [TransmitBuffer(subnetwork=i, period=2, packet_bits=1024.0)
            for i in range(4)]
    delivered = 0
    for now in range(200):
        for b in bufs:
            b.maybe_generate(now)
        _, ev = advance_buffers(bufs, rng.uniform(0, 2e6, size=4), now=now)
        delivered += len(ev)
    generated = 4 * 100
    backlog = sum(b.backlog_bits for b in bufs)
    assert generated * 1024.0 == pytest.approx(delivered * 1024.0 + backlog)


def test_freshest_delivery_selection():
    ev = [DeliveryEvent(0, 2, 10), DeliveryEvent(0, 6, 10),
          DeliveryEvent(1, 0, 10)]
    best = freshest_delivery(ev, 0)
    assert best.generated_at == 6 and best.t_d == 4
    assert freshest_delivery(ev, 2) is None
    assert freshest_delivery([], 0) is None


def test_object_and_counter_kernels_agree():
    """advance_buffers and the vectorized _drain_tti must produce identical
    delivery counts, ages and residual head bits for the same rate stream."""
    rng = np.random.default_rng(99)
    n, period, pkt = 4, 2, 1024.0
    bufs = [TransmitBuffer(subnetwork=i, period=period, packet_bits=pkt)
            for i in range(n)]
    dcount = np.zeros(n, dtype=np.int64)
    head_rem = np.full(n, pkt)
    tti = RadioParams().tti_s
    for now in range(300):
        rate = np.where(rng.uniform(size=n) < 0.25, 0.0,
                        rng.uniform(0, 3e6, size=n))
        for b in bufs:
            b.maybe_generate(now)
        _, ev = advance_buffers(bufs, rate, now=now)
        q_upto = now // period + 1
        dcount, head_rem, k_full = _drain_tti(rate * tti, q_upto,
                                              dcount, head_rem, pkt)
        # same number of deliveries per subnetwork this TTI
        per_sub = np.bincount([e.subnetwork for e in ev], minlength=n)
        np.testing.assert_array_equal(per_sub, k_full)
        # same ages: counter i of subnetwork s was generated at i * period
        for s in range(n):
            ages_obj = sorted(e.t_d for e in ev if e.subnetwork == s)
            first = dcount[s] - k_full[s]
            ages_ctr = sorted(now - (first + j) * period
                              for j in range(k_full[s]))
            assert ages_obj == ages_ctr
        # same residual bits in the head packet
        for s, b in enumerate(bufs):
            if b.queue:
                assert b.queue[0].remaining_bits == pytest.approx(
                    head_rem[s], abs=1e-6)
            else:
                assert q_upto - dcount[s] == 0
