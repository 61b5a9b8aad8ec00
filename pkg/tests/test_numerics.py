import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from optstop.errors import BracketError, ConvergenceError, DomainError
from optstop.numerics import (QUAD_TOL, Tolerance, adaptive_quad, bessel_i, bisect,
                              exp1_scaled, exp_integral_e1, lambert_w0, lambert_w0_negexp)

INV_E = math.exp(-1.0)


@given(st.floats(min_value=-INV_E, max_value=1e300, allow_nan=False))
def test_w0_residual(x):
    w = lambert_w0(x)
    assert w >= -1.0
    # residual relative to the size of the terms
    assert abs(w * math.exp(w) - x) <= 1e-13 * max(1.0, abs(x))


@given(st.floats(min_value=-INV_E, max_value=50.0))
def test_w0_matches_mpmath(x):
    ref = float(mpmath.lambertw(mpmath.mpf(x), 0).real)
    # accuracy near the branch point is limited by the rounding of x itself
    tol = 1e-12 if x > -0.36 else 1e-7
    assert lambert_w0(x) == pytest.approx(ref, rel=tol, abs=tol)


def test_w0_special_values():
    assert lambert_w0(0.0) == 0.0
    assert lambert_w0(-INV_E) == -1.0
    assert lambert_w0(math.e) == pytest.approx(1.0, rel=1e-15)
    assert lambert_w0(1.0) == pytest.approx(0.5671432904097838, rel=1e-15)


def test_w0_vectorized_shape():
    x = np.linspace(-0.3, 10, 12).reshape(3, 4)
    w = lambert_w0(x)
    assert w.shape == (3, 4)
    np.testing.assert_allclose(w, special.lambertw(x).real, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("bad", [-0.5, float("nan")])
def test_w0_domain(bad):
    with pytest.raises(DomainError):
        lambert_w0(bad)


def _negexp_ref(s):
    with mpmath.workdps(60):
        return float(mpmath.lambertw(-mpmath.exp(-1 - mpmath.mpf(s)), 0).real)


@given(st.floats(min_value=0.0, max_value=700.0))
def test_negexp_matches_mpmath(s):
    assert lambert_w0_negexp(s) == pytest.approx(_negexp_ref(s), rel=1e-14, abs=1e-300)


@given(st.floats(min_value=1e-14, max_value=1e-3))
def test_negexp_keeps_digits_near_branch(s):
    # W + 1 ~ sqrt(2s): compare the small offset, which the direct route loses
    w = lambert_w0_negexp(s)
    ref = _negexp_ref(s)
    assert (w + 1.0) == pytest.approx(ref + 1.0, rel=1e-9)


def test_negexp_domain():
    with pytest.raises(DomainError):
        lambert_w0_negexp(-1e-3)


@given(st.integers(min_value=0, max_value=30), st.floats(min_value=0.0, max_value=600.0))
def test_bessel_scaled_consistent(order, x):
    full = bessel_i(order, x)
    if np.isfinite(full) and full > 1e-300:
        assert bessel_i(order, x, scaled=True) == pytest.approx(full * math.exp(-x), rel=1e-10)


def test_bessel_order_validation():
    with pytest.raises(DomainError):
        bessel_i(1.5, 1.0)


@given(st.floats(min_value=1e-8, max_value=1e4))
def test_e1_against_mpmath(x):
    assert exp_integral_e1(x) == pytest.approx(float(mpmath.e1(x)), rel=1e-12, abs=1e-300)
    assert exp1_scaled(x) == pytest.approx(float(mpmath.exp(x) * mpmath.e1(x)), rel=1e-12)


def test_exp1_scaled_asymptotic_branch():
    x = np.array([599.0, 601.0, 1e5])
    ref = [float(mpmath.exp(v) * mpmath.e1(v)) for v in x]
    np.testing.assert_allclose(exp1_scaled(x), ref, rtol=1e-12)


def test_e1_domain():
    with pytest.raises(DomainError):
        exp_integral_e1(0.0)


@given(st.floats(min_value=-50, max_value=50), st.floats(min_value=0.1, max_value=10))
def test_bisect_linear_root(root, slope):
    x = bisect(lambda t: slope * (t - root), -100.0, 100.0)
    assert -100.0 <= x <= 100.0
    assert abs(x - root) <= 1e-9 * max(1.0, abs(root)) / min(slope, 1.0)


def test_bisect_errors():
    with pytest.raises(BracketError):
        bisect(lambda t: t * t + 1.0, -1.0, 1.0)
    with pytest.raises(BracketError):
        bisect(lambda t: t, 1.0, -1.0)
    with pytest.raises(ConvergenceError):
        bisect(lambda t: math.atan(t - math.pi), 0.0, 10.0,
               Tolerance(abs_tol=0.0, rel_tol=1e-15, max_iter=5))


def test_adaptive_quad_known_integrals():
    assert adaptive_quad(lambda x: math.exp(-x), 0.0, math.inf) == pytest.approx(1.0, rel=1e-12)
    assert adaptive_quad(math.sin, 0.0, math.pi) == pytest.approx(2.0, rel=1e-12)
    e1 = adaptive_quad(lambda t: math.exp(-t) / t, 0.5, math.inf, QUAD_TOL)
    assert e1 == pytest.approx(special.exp1(0.5), rel=1e-9)


def test_adaptive_quad_budget():
    f = lambda x: math.sin(1.0 / x) / x if x > 0 else 0.0
    with pytest.raises(ConvergenceError):
        adaptive_quad(f, 0.0, 1.0, Tolerance(abs_tol=0.0, rel_tol=1e-13, max_iter=3))
