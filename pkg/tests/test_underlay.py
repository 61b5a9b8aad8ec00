import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from optstop import SystemConfig
from optstop.errors import IllPosedError
from optstop.model import z_pdf_busy, z_pdf_free, z_pdf_marginal
from optstop.numerics import adaptive_quad
from optstop.overlay import threshold_backsolve
from optstop.underlay import (UnderlayPolicy, _Underlay, constant_power_underlay_thresholds,
                              posterior_busy, solve_constant_power_underlay, solve_underlay,
                              underlay_metrics, underlay_threshold, z_rule)

from oracles import exp_stage


def _cfg(**kw):
    base = dict(num_channels=3, sensing_fraction=0.05, theta=0.5, avg_interference_budget=1.0,
                detector_samples=10, noise_var=1.0, pu_energy=2.0)
    base.update(kw)
    return SystemConfig(**base)


@given(st.floats(0.01, 0.99), st.integers(1, 30), st.floats(0.1, 8.0))
def test_posterior_is_bayes_rule(theta, N, E):
    cfg = _cfg(theta=theta, detector_samples=N, pu_energy=E)
    z = np.linspace(0.05, 1 + 3 * E, 25)
    pi = posterior_busy(1, z, cfg)
    fb, ff = z_pdf_busy(z, cfg), z_pdf_free(z, cfg)
    ref = (1 - theta) * fb / ((1 - theta) * fb + theta * ff)
    assert np.all((pi >= 0) & (pi <= 1))
    np.testing.assert_allclose(pi, ref, rtol=1e-9, atol=1e-300)
    # likelihood ratio of the busy law is increasing in z
    assert np.all(np.diff(pi) >= -1e-15)


def test_posterior_extremes():
    z = np.array([0.5, 1.0, 5.0])
    np.testing.assert_array_equal(posterior_busy(1, z, _cfg(theta=1.0)), 0.0)
    np.testing.assert_array_equal(posterior_busy(1, z, _cfg(theta=0.0)), 1.0)
    np.testing.assert_allclose(posterior_busy(1, z, _cfg(theta=0.3, pu_energy=0.0)), 0.7)
    # far tails where both densities underflow
    far = posterior_busy(1, np.array([1e-8, 1e4]), _cfg(detector_samples=50))
    assert far[0] == pytest.approx(0.0, abs=1e-12) and far[1] == pytest.approx(1.0)


@pytest.mark.parametrize("theta", [0.2, 0.5, 0.8])
def test_posterior_averages_to_prior(theta):
    cfg = _cfg(theta=theta)
    rule = z_rule(cfg)
    f = theta * np.exp(rule.log_free) + (1 - theta) * np.exp(rule.log_busy)
    mean_pi = float(np.dot(rule.weights, f * posterior_busy(1, rule.nodes, cfg)))
    assert mean_pi == pytest.approx(1 - theta, rel=1e-10)


@pytest.mark.parametrize("N,E", [(1, 2.0), (10, 2.0), (10, 10.0), (50, 0.5)])
def test_z_rule_vs_adaptive_quad(N, E):
    cfg = _cfg(detector_samples=N, pu_energy=E)
    rule = z_rule(cfg)
    assert rule.free_mass == pytest.approx(1.0, abs=1e-12)
    assert rule.busy_mass == pytest.approx(1.0, abs=1e-12)
    h = lambda z: math.log1p(z) * float(z_pdf_marginal(1, z, cfg))
    ref = adaptive_quad(h, 0.0, math.inf)
    f = 0.5 * np.exp(rule.log_free) + 0.5 * np.exp(rule.log_busy)
    assert float(np.dot(rule.weights, np.log1p(rule.nodes) * f)) == pytest.approx(ref, rel=1e-9)


def test_single_channel_double_integral():
    cfg = _cfg(num_channels=1, theta=0.4)
    lam_i = 0.7
    m, rec = underlay_metrics(lam_i, 0.0, 0.0, cfg)
    # last channel: threshold equals the water level mu(z) = lam_i pi(z)
    def inner(z, which):
        mu = lam_i * float(posterior_busy(1, z, cfg))
        F, r, q = exp_stage(mu, mu)
        return {"rate": r, "power": q, "ccdf": F}[which]
    c = cfg.c[0]
    U = c * adaptive_quad(lambda z: inner(z, "rate") * float(z_pdf_marginal(1, z, cfg)), 0.0, math.inf)
    I = c * adaptive_quad(lambda z: inner(z, "power") * 0.6 * float(z_pdf_busy(z, cfg)), 0.0, math.inf)
    assert m.throughput == pytest.approx(U, rel=1e-7)
    assert m.interference == pytest.approx(I, rel=1e-7)
    p = adaptive_quad(lambda z: inner(z, "ccdf") * float(z_pdf_marginal(1, z, cfg)), 0.0, math.inf)
    assert m.success_prob == pytest.approx(p, rel=1e-9)


@given(st.floats(0.05, 0.95), st.floats(0.05, 3.0))
def test_uninformative_detector_reduces_to_overlay(theta, lam_i):
    # pi = 1 - theta everywhere: every channel is "accessible" at water level lam_i (1 - theta)
    cfg = _cfg(theta=theta, pu_energy=0.0)
    m, rec = underlay_metrics(lam_i, 0.0, 0.0, cfg)
    ov = threshold_backsolve(lam_i * (1 - theta), 0.0,
                             SystemConfig(num_channels=3, sensing_fraction=0.05, theta=1.0))
    assert rec.U[0] == pytest.approx(ov.U[0], rel=1e-9)
    assert rec.I[0] == pytest.approx((1 - theta) * ov.S[0], rel=1e-9)
    assert rec.p[0] == pytest.approx(ov.p[0], rel=1e-9)


@pytest.mark.parametrize("lam_d", [0.0, 0.5])
def test_interference_decreasing_in_lambda_i(lam_d):
    model = _Underlay(_cfg(num_channels=5))
    grid = np.linspace(0.02, 5.0, 100)
    I = np.array([model.recurse(l, 0.0, lam_d).I[0] for l in grid])
    assert np.all(np.diff(I) < 0)


@given(st.floats(0.05, 3.0), st.floats(0.0, 1.0), st.floats(0.0, 2.0))
def test_threshold_indifference(lam_i, lam_p, lam_d):
    cfg = _cfg(avg_power_budget=None)
    m, rec = underlay_metrics(lam_i, lam_p, lam_d, cfg)
    pol = UnderlayPolicy(lam_i, lam_p, lam_d, rec.u, rec.U, rec.I, rec.p, rec.S)
    z = np.array([0.3, 1.0, 2.5, 4.0])
    for i in (1, 2, 3):
        t = pol.threshold(i, z, cfg)
        mu = lam_p + lam_i * posterior_busy(i, z, cfg)
        assert np.all(t >= mu * (1 - 1e-12))
        A = rec.U[i] - lam_i * rec.I[i] - lam_p * rec.S[i] - lam_d * (1 - rec.p[i])
        gain = cfg.c[i - 1] * (np.log(t / mu) - 1 + mu / t)
        np.testing.assert_allclose(gain, max(A, 0.0), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(underlay_threshold(i, z, lam_i, lam_p, lam_d, pol, cfg), t)


def test_solve_meets_interference_budget(underlay_cfg):
    pol = solve_underlay(underlay_cfg)
    assert pol.I[0] == pytest.approx(1.0, rel=1e-7)
    assert pol.lambda_i > 0 and pol.lambda_p == 0
    base = solve_underlay(underlay_cfg, baseline=True)
    assert base.I[0] == pytest.approx(1.0, rel=1e-7)
    assert pol.U[0] > base.U[0]
    np.testing.assert_array_equal(base.multipliers, 1.0)


def test_power_budget_extension(underlay_cfg):
    cfg = underlay_cfg.replace(avg_power_budget=2.0)
    pol = solve_underlay(cfg)
    assert pol.S[0] <= 2.0 * (1 + 1e-7)
    assert pol.I[0] <= 1.0 * (1 + 1e-7)
    assert pol.lambda_p > 0
    assert pol.U[0] < solve_underlay(underlay_cfg).U[0]


def test_binding_delay(underlay_cfg):
    free = solve_underlay(underlay_cfg)
    base = solve_underlay(underlay_cfg, baseline=True)
    target = 0.5 * (free.p[0] + base.p[0])
    pol = solve_underlay(underlay_cfg.replace(max_mean_delay=1 / target))
    assert pol.lambda_d > 0
    assert pol.p[0] == pytest.approx(target, abs=1e-4)
    assert pol.I[0] == pytest.approx(1.0, rel=1e-6)


def test_underlay_errors():
    with pytest.raises(ValueError):
        solve_underlay(_cfg(inst_power_cap=1.0))
    with pytest.raises(IllPosedError):
        underlay_metrics(0.0, 0.0, 0.0, _cfg())
    with pytest.raises(IllPosedError):
        solve_underlay(_cfg(avg_interference_budget=None))


def test_constant_power_underlay(underlay_cfg):
    P = 3.0
    pol = solve_constant_power_underlay(underlay_cfg, P)
    assert pol.I[0] == pytest.approx(1.0, rel=1e-7)
    z = np.linspace(0.2, 5, 9)
    for i in (1, 4):
        t = pol.threshold(i, z, underlay_cfg)
        A = pol._A(i)
        pi = posterior_busy(i, z, underlay_cfg)
        c = underlay_cfg.c[i - 1]
        inside = t > 0
        np.testing.assert_allclose(c * (np.log1p(P * t[inside]) - pol.lambda_i * P * pi[inside]),
                                   A, rtol=1e-9, atol=1e-12)
    fixed = constant_power_underlay_thresholds(P, pol.lambda_i, 0.0, underlay_cfg)
    np.testing.assert_allclose(fixed.U, pol.U)
    np.testing.assert_array_equal(pol.power(1, z, z, underlay_cfg), P)


def test_policy_roundtrip(underlay_cfg):
    pol = solve_underlay(underlay_cfg)
    back = UnderlayPolicy.from_dict(pol.to_dict())
    assert back.metrics == pol.metrics
    np.testing.assert_array_equal(back.multipliers, pol.multipliers)
