"""Special functions and root-finding primitives.

Lambert W and bisection are implemented here directly. The exponential
integral, modified Bessel functions and adaptive quadrature are thin,
contract-checking wrappers over :mod:`scipy.special` and
:mod:`scipy.integrate`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import BracketError, ConvergenceError, DomainError

__all__ = [
    "Tolerance",
    "ROOT_TOL",
    "QUAD_TOL",
    "lambert_w0",
    "lambert_w0_negexp",
    "bessel_i",
    "exp_integral_e1",
    "exp1_scaled",
    "bisect",
    "adaptive_quad",
]

INV_E = math.exp(-1.0)


@dataclass(frozen=True)
class Tolerance:
    """Stopping rule for iterative numerics.

    ``abs_tol`` bounds the residual, ``rel_tol`` the relative interval
    width (root finding) or the relative error estimate (quadrature).
    """

    abs_tol: float = 1e-10
    rel_tol: float = 1e-9
    max_iter: int = 200

    def __post_init__(self):
        if self.abs_tol < 0 or self.rel_tol < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.abs_tol + self.rel_tol <= 0:
            raise ValueError("abs_tol + rel_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


ROOT_TOL = Tolerance(abs_tol=1e-10, rel_tol=1e-12, max_iter=200)
QUAD_TOL = Tolerance(abs_tol=0.0, rel_tol=1e-9, max_iter=200)


# --------------------------------------------------------------------------
# Lambert W, principal branch
# --------------------------------------------------------------------------

def _w0_seed(x: np.ndarray) -> np.ndarray:
    w = np.empty_like(x)
    near = x < -0.25
    mid = (~near) & (x <= 3.0)
    far = x > 3.0
    # branch-point series in p = sqrt(2(ex + 1))
    p = np.sqrt(np.maximum(2.0 * (math.e * x[near] + 1.0), 0.0))
    w[near] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    w[mid] = np.log1p(x[mid])
    l1 = np.log(x[far])
    l2 = np.log(l1)
    w[far] = l1 - l2 + l2 / l1
    return w


def lambert_w0(x, abs_tol: float = 1e-14):
    """Principal branch W0 of the Lambert W function for real ``x >= -1/e``.

    Halley iteration from a branch-aware seed. Accepts scalars or arrays;
    returns the same shape. Inputs within ``abs_tol`` below ``-1/e`` are
    clamped to the branch point.
    """
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    xs = np.atleast_1d(arr).astype(float).ravel()
    if np.any(np.isnan(xs)):
        raise DomainError("lambert_w0 of NaN")
    if np.any(xs < -INV_E - abs_tol):
        raise DomainError(f"lambert_w0 requires x >= -1/e, got min {xs.min()!r}")
    xs = np.maximum(xs, -INV_E)

    w = _w0_seed(xs)
    branch = xs <= -INV_E
    w[branch] = -1.0
    active = ~branch & (xs != 0.0)
    w[xs == 0.0] = 0.0
    for _ in range(60):
        if not active.any():
            break
        wa = w[active]
        ew = np.exp(wa)
        f = wa * ew - xs[active]
        wp1 = wa + 1.0
        denom = ew * wp1 - (wa + 2.0) * f / (2.0 * wp1)
        with np.errstate(divide="ignore", invalid="ignore"):
            dw = np.where(denom != 0.0, f / denom, 0.0)
        wn = np.maximum(wa - dw, -1.0)
        w[active] = wn
        done = np.abs(dw) <= 4e-16 * (1.0 + np.abs(wn))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return float(w[0]) if scalar else w.reshape(arr.shape)


def lambert_w0_negexp(s):
    """``W0(-exp(-1 - s))`` for ``s >= 0``, accurate near the branch point.

    Computing the argument first and calling :func:`lambert_w0` loses
    about half the digits when ``s`` is tiny. Here the equation is solved
    in ``y = log(-W)``, i.e. ``y - expm1(y) + s = 0`` with ``y <= 0``.
    """
    arr = np.asarray(s, dtype=float)
    scalar = arr.ndim == 0
    ss = np.atleast_1d(arr).astype(float).ravel()
    if np.any(ss < 0) or np.any(np.isnan(ss)):
        raise DomainError("lambert_w0_negexp requires s >= 0")

    y = np.empty_like(ss)
    small = ss < 2.0
    p = np.sqrt(-2.0 * np.expm1(-ss[small]))
    v = 1.0 - p + p * p / 3.0 - 11.0 / 72.0 * p ** 3 + 43.0 / 540.0 * p ** 4
    y[small] = np.log(np.clip(v, 1e-300, 1.0))
    big = ~small
    # v = exp(v - 1 - s) fixed point, two sweeps give ~1e-4 relative
    vb = np.exp(-1.0 - ss[big])
    vb = np.exp(vb - 1.0 - ss[big])
    y[big] = vb - 1.0 - ss[big]

    zero = ss == 0.0
    y[zero] = 0.0
    active = ~zero
    for _ in range(60):
        if not active.any():
            break
        ya = y[active]
        em1 = np.expm1(ya)
        h = (ya - em1) + ss[active]
        d1 = -em1
        d2 = -(em1 + 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = d1 - h * d2 / (2.0 * d1)
            dy = np.where(d1 != 0.0, h / denom, 0.0)
        yn = np.minimum(ya - dy, 0.0)
        y[active] = yn
        done = np.abs(dy) <= 4e-16 * (1.0 + np.abs(yn))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    w = -np.exp(y)
    return float(w[0]) if scalar else w.reshape(arr.shape)


# --------------------------------------------------------------------------
# Bessel and exponential integrals
# --------------------------------------------------------------------------

def bessel_i(order: int, x, scaled: bool = False):
    """Modified Bessel function of the first kind ``I_order(x)``.

    With ``scaled=True`` returns ``exp(-x) I_order(x)``, which stays finite
    for large arguments.
    """
    if int(order) != order or order < 0 or order > 64:
        raise DomainError("bessel_i order must be an integer in [0, 64]")
    if scaled:
        return special.ive(int(order), x)
    return special.iv(int(order), x)


def exp_integral_e1(x):
    """Exponential integral ``E1(x) = int_x^inf exp(-t)/t dt`` for ``x > 0``."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0) or np.any(np.isnan(arr)):
        raise DomainError("exp_integral_e1 requires x > 0")
    out = special.exp1(arr)
    return float(out) if np.ndim(out) == 0 else out


def exp1_scaled(x):
    """``exp(x) * E1(x)`` for ``x > 0`` without overflow."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr <= 0):
        raise DomainError("exp1_scaled requires x > 0")
    xs = np.atleast_1d(arr)
    out = np.empty_like(xs)
    lo = xs < 600.0
    out[lo] = np.exp(xs[lo]) * special.exp1(xs[lo])
    hi = ~lo
    if hi.any():
        r = 1.0 / xs[hi]
        out[hi] = r * (1.0 - r * (1.0 - 2.0 * r * (1.0 - 3.0 * r * (1.0 - 4.0 * r * (1.0 - 5.0 * r)))))
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


# --------------------------------------------------------------------------
# Root finding and quadrature
# --------------------------------------------------------------------------

def bisect(f: Callable[[float], float], lo: float, hi: float,
           tol: Tolerance = ROOT_TOL) -> float:
    """Bisection root of a monotone scalar function on ``[lo, hi]``.

    Stops when ``|f(x)| <= tol.abs_tol`` or the bracket width falls below
    ``tol.rel_tol * |x|``. The returned point always lies in ``[lo, hi]``.
    """
    if not lo <= hi:
        raise BracketError(f"empty bracket [{lo}, {hi}]")
    flo = f(lo)
    if flo == 0.0:
        return lo
    fhi = f(hi)
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise BracketError(f"f({lo})={flo:.6g} and f({hi})={fhi:.6g} have the same sign")
    for _ in range(tol.max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol.abs_tol or (hi - lo) <= tol.rel_tol * abs(mid):
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
        if mid == lo == hi:
            return mid
    raise ConvergenceError(f"bisect did not converge in {tol.max_iter} iterations")


def adaptive_quad(f: Callable[[float], float], a: float, b: float,
                  tol: Tolerance = QUAD_TOL) -> float:
    """Adaptive Gauss-Kronrod quadrature of ``f`` over ``[a, b]``.

    ``b`` may be ``inf``; QUADPACK then maps ``[a, inf)`` onto ``(0, 1]`` by
    ``x = a + (1 - t)/t`` before integrating. ``tol.max_iter`` caps the
    number of subintervals.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, epsabs=tol.abs_tol, epsrel=tol.rel_tol,
                                      limit=tol.max_iter)
        except integrate.IntegrationWarning as exc:
            raise ConvergenceError(f"adaptive_quad failed on [{a}, {b}]: {exc}") from exc
    return val
