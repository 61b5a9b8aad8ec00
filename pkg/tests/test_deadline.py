import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from optstop import SystemConfig
from optstop.deadline import (FrameSpec, OnlineState, PolicyCache, equivalent_max_delay,
                              frame_stats, frame_success_prob, online_step,
                              required_success_prob, solve_offline)

from oracles import binom_tail


@pytest.fixture(scope="module")
def cfg():
    return SystemConfig(num_channels=10, sensing_fraction=0.05, theta=0.5, avg_power_budget=0.2)


def test_frame_success_exact_value():
    assert frame_success_prob(2, 4, 0.5) == 11 / 16
    exact = sum(Fraction(math.comb(4, n), 16) for n in range(2, 5))
    assert exact == Fraction(11, 16)


@given(st.integers(1, 12), st.integers(0, 12), st.floats(0, 1))
def test_frame_success_is_binomial_tail(K, extra, p):
    n = K + extra
    assert frame_success_prob(K, n, p) == pytest.approx(binom_tail(K, n, p), abs=1e-14)


@given(st.integers(1, 6), st.integers(1, 10), st.floats(0.01, 0.999))
def test_required_probability_is_tight(K, extra, r):
    n = K + extra
    p = required_success_prob(K, n, r)
    assert frame_success_prob(K, n, p) >= r
    assert frame_success_prob(K, n, max(p - 1e-12, 0.0)) <= r + 1e-12


@given(st.integers(1, 6), st.integers(1, 10), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_frame_success_monotone(K, extra, p, q):
    lo, hi = sorted((p, q))
    assert frame_success_prob(K, K + extra, lo) <= frame_success_prob(K, K + extra, hi) + 1e-15


def test_equivalent_delay():
    d = equivalent_max_delay(2, 4, 0.95)
    assert d == pytest.approx(1 / required_success_prob(2, 4, 0.95))
    assert equivalent_max_delay(2, 4, 0.0) is None


@pytest.mark.parametrize("K,tf,r", [(0, 4, 0.9), (2, 2, 0.9), (2, 4, 1.0), (2, 4, -0.1)])
def test_frame_spec_validation(K, tf, r):
    with pytest.raises(ValueError):
        FrameSpec(K, tf, r)


def test_offline_meets_frame_target(cfg):
    frame = FrameSpec(2, 4, 0.95)
    pol = solve_offline(cfg, frame)
    assert frame_success_prob(2, 4, pol.p[0]) >= 0.95 - 1e-9
    st_off = frame_stats(cfg, frame, "offline", offline=pol)
    assert st_off["frame_success"] == pytest.approx(frame_success_prob(2, 4, pol.p[0]))


def test_online_beats_offline_at_binding_budget(cfg):
    frame = FrameSpec(2, 4, 0.95)
    cache = PolicyCache(cfg, frame).fill()
    off = frame_stats(cfg, frame, "offline", cache=cache)
    on = frame_stats(cfg, frame, "online", cache=cache)
    assert on["frame_success"] >= 0.95
    assert on["throughput"] > off["throughput"]
    assert len(cache) == 7 + 1  # live (k, n) states plus the free policy


def test_unconstrained_frames_collapse(cfg):
    frame = FrameSpec(2, 4, 0.0)
    cache = PolicyCache(cfg, frame)
    off = frame_stats(cfg, frame, "offline", cache=cache)
    on = frame_stats(cfg, frame, "online", cache=cache)
    assert on == pytest.approx(off)


def test_catch_up_state_flags_risk(cfg):
    frame = FrameSpec(3, 4, 0.9)
    cache = PolicyCache(cfg, frame)
    # three packets with three slots left cannot reach r_min = 0.9 here
    pol = cache.get(3, 3)
    assert pol.meta["qos_risk"] is True


def test_online_state_machine(cfg):
    frame = FrameSpec(2, 4, 0.95)
    cache = PolicyCache(cfg, frame)
    s = online_step(OnlineState.start(frame), cfg, frame, cache)
    assert s.policy is not None and s.slots_left == 4
    s = online_step(s.advance(True), cfg, frame, cache)
    assert s.remaining == 1 and s.slot == 2
    s = online_step(s.advance(True), cfg, frame, cache)
    assert s.done and s.outcome is True
    assert len(s.history) == 2
    # failure path: no packet in the first three slots leaves 2 > 1 slot
    f = OnlineState.start(frame)
    for _ in range(3):
        f = online_step(f, cfg, frame, cache).advance(False)
    assert online_step(f, cfg, frame, cache).outcome is False


def test_backlogged_variant(cfg):
    frame = FrameSpec(2, 4, 0.95)
    cache = PolicyCache(cfg, frame)
    idle = frame_stats(cfg, frame, "online", cache=cache)
    free = frame_stats(cfg, frame, "online", cache=cache, after="free")
    assert free["throughput"] > idle["throughput"]
    assert free["frame_success"] == idle["frame_success"]
    with pytest.raises(ValueError):
        frame_stats(cfg, frame, "online", cache=cache, after="other")
