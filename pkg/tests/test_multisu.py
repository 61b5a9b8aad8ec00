import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from optstop import SystemConfig
from optstop.errors import InfeasibleError
from optstop.multisu import MultiSuPolicy, exact_is_feasible, multi_su_metrics, solve_multi_su
from optstop.overlay import solve_overlay


def _cfg(L, **kw):
    base = dict(num_channels=10, sensing_fraction=0.05, theta=0.5, avg_power_budget=10.0,
                num_users=L)
    base.update(kw)
    return SystemConfig(**base)


def test_single_user_reduces_to_overlay():
    cfg = _cfg(1, num_channels=4, theta=(0.3, 0.5, 0.7, 0.4), avg_power_budget=2.0)
    ms = solve_multi_su(cfg, mode="exact")
    ov = solve_overlay(cfg)
    np.testing.assert_allclose(ms.thresholds, ov.thresholds, rtol=1e-9)
    np.testing.assert_allclose([ms.U[0], ms.p[0]], [ov.U[0], ov.p[0]], rtol=1e-9)
    m = multi_su_metrics(ov.thresholds, ov.lambda_p, cfg, pool="shrinking")
    assert m.throughput == pytest.approx(ov.U[0], rel=1e-9)


@given(st.integers(1, 40), st.floats(0.05, 1.0))
def test_zero_thresholds_single_channel(L, theta):
    cfg = _cfg(L, num_channels=1, theta=theta, avg_power_budget=1.0)
    m = multi_su_metrics([0.0], 0.5, cfg)
    assert m.success_prob == pytest.approx(theta / L, rel=1e-12)


def test_per_user_and_aggregate_throughput_in_L():
    Ls = [1, 2, 5, 10, 30]
    U = np.array([solve_multi_su(_cfg(L), mode="exact").U[0] for L in Ls])
    assert np.all(np.diff(U) < 0)
    assert np.all(np.diff(U * np.array(Ls)) >= 0)


def test_asymptotic_mode_is_max_success():
    cfg = _cfg(30)
    pol = solve_multi_su(cfg, mode="asymptotic")
    assert pol.asymptotic and pol.lambda_d == 0.0
    np.testing.assert_allclose(pol.thresholds, pol.lambda_p)
    assert pol.S[0] == pytest.approx(10.0, rel=1e-7)
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = pol.lambda_p + rng.exponential(0.5, size=10)
        assert multi_su_metrics(t, pol.lambda_p, cfg).success_prob <= pol.p[0] + 1e-15


def test_asymptotic_reports_delay_instead_of_raising():
    cfg = _cfg(30, max_mean_delay=1.1)
    pol = solve_multi_su(cfg, mode="asymptotic")
    assert pol.meta["delay_feasible"] is False
    with pytest.raises(InfeasibleError):
        solve_multi_su(cfg, mode="exact")
    assert not exact_is_feasible(cfg)
    assert exact_is_feasible(cfg.replace(max_mean_delay=8.0))


def test_default_mode_switch():
    assert solve_multi_su(_cfg(100)).asymptotic
    assert not solve_multi_su(_cfg(30)).asymptotic


def test_gumbel_close_to_exact():
    a = solve_multi_su(_cfg(30), mode="asymptotic")
    b = solve_multi_su(_cfg(30), mode="asymptotic", gumbel=True)
    assert b.gumbel
    assert abs(a.U[0] - b.U[0]) / a.U[0] < 0.02


def test_shrinking_pool_exceeds_fixed():
    # fewer competitors on later channels can only help the tagged user
    cfg = _cfg(5, num_channels=4)
    pol = solve_multi_su(cfg, mode="asymptotic")
    fixed = multi_su_metrics(pol.thresholds, pol.lambda_p, cfg, pool="fixed")
    shrink = multi_su_metrics(pol.thresholds, pol.lambda_p, cfg, pool="shrinking")
    assert shrink.success_prob > fixed.success_prob


def test_policy_roundtrip():
    pol = solve_multi_su(_cfg(3, num_channels=3), mode="exact")
    back = MultiSuPolicy.from_dict(pol.to_dict())
    assert back.num_users == 3 and back.metrics == pol.metrics


def test_bad_arguments():
    with pytest.raises(ValueError):
        solve_multi_su(_cfg(2), mode="fast")
    with pytest.raises(ValueError):
        multi_su_metrics([1.0], 0.5, _cfg(2))
    with pytest.raises(ValueError):
        multi_su_metrics([1.0] * 10, 0.5, _cfg(2), pool="other")
