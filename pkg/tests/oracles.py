"""Independent reference computations used by several test modules."""

import math

import numpy as np
from scipy import special


def exp_stage(t, lam, g=1.0):
    """(ccdf, rate, power) integrals above ``t`` for exponential gain, t >= lam."""
    t = np.asarray(t, dtype=float)
    F = np.exp(-t / g)
    E = special.exp1(t / g)
    rate = np.log(t / lam) * F + E
    power = F / lam - E / g
    return F, rate, power


def brute_thresholds(theta, c, lam_p, lam_d, g=1.0, step=1e-4, span=12.0):
    """Grid-maximize the Lagrangian stage by stage from the last channel.

    With ``V = U - lam_p S + lam_d p`` (the Lagrangian up to a constant),
    ``V_i(t) = w c (r(t) - lam_p q(t)) + lam_d w F(t) + (1 - w F(t)) V_{i+1}``
    and ``V_{M+1} = 0``. The best ``t`` for stage ``i`` does not depend on
    earlier thresholds, so a 1-D grid per stage is exhaustive.
    """
    M = len(theta)
    grid = lam_p + step * np.arange(int(span * g / step) + 1)
    F, r, q = exp_stage(grid, lam_p, g)
    value = 0.0
    out = np.empty(M)
    for i in range(M - 1, -1, -1):
        w = theta[i]
        Li = w * c[i] * (r - lam_p * q) + w * F * lam_d + (1.0 - w * F) * value
        k = int(np.argmax(Li))
        out[i] = grid[k]
        value = float(Li[k])
    return out


def geometric_pmf(p, d):
    return p * (1.0 - p) ** (np.asarray(d) - 1)


def binom_tail(K, n, p):
    return math.fsum(math.comb(n, k) * p ** k * (1 - p) ** (n - k) for k in range(K, n + 1))
