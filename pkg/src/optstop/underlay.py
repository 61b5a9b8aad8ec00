"""Underlay solver: thresholds and powers as functions of the sensing statistic.

The SU never learns the true channel state. It observes the detector
output ``z``, forms the busy posterior ``pi(z)`` and transmits with the
water level ``1/(lambda_P + lambda_I pi(z))``. The Lambert-W multiplier
``u_i`` is the same for every ``z``, so a stage threshold is
``gamma_th(i, z) = (lambda_P + lambda_I pi(z)) u_i``.

Outer ``z`` integrals use a fixed composite Gauss-Legendre rule over the
region where either detector density exceeds ``1e-14`` of its peak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import IllPosedError, InfeasibleError
from .model import ExponentialGain, SystemConfig, z_logpdf_busy, z_logpdf_free
from .numerics import bisect, lambert_w0_negexp
from .overlay import Metrics, SolverKnobs, _DualPoint, select_lambda_d

__all__ = [
    "UnderlayPolicy",
    "ZRule",
    "z_rule",
    "posterior_busy",
    "underlay_power",
    "underlay_threshold",
    "underlay_metrics",
    "solve_underlay",
    "constant_power_underlay_thresholds",
    "solve_constant_power_underlay",
]

TRUNC_REL = 1e-14


# --------------------------------------------------------------------------
# Posterior and z quadrature
# --------------------------------------------------------------------------

def posterior_busy(i: int, z, cfg: SystemConfig):
    """``Pr[b_i = 1 | z]`` for channel ``i`` (1-based)."""
    th = cfg.theta[i - 1]
    z = np.asarray(z, dtype=float)
    if th >= 1.0:
        out = np.zeros_like(z)
    elif th <= 0.0:
        out = np.ones_like(z)
    else:
        lf = z_logpdf_free(z, cfg)
        lb = z_logpdf_busy(z, cfg)
        with np.errstate(invalid="ignore"):
            lo = math.log1p(-th) - math.log(th) + lb - lf
        both = np.isneginf(lf) & np.isneginf(lb)
        busy_mean = cfg.noise_var + cfg.pu_energy
        out = np.where(both, (z > busy_mean).astype(float), expit(np.nan_to_num(lo, nan=0.0)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ZRule:
    """Quadrature nodes/weights on the truncated ``z`` domain."""

    nodes: np.ndarray
    weights: np.ndarray
    lo: float
    hi: float
    log_free: np.ndarray
    log_busy: np.ndarray

    @property
    def free_mass(self) -> float:
        return float(np.dot(self.weights, np.exp(self.log_free)))

    @property
    def busy_mass(self) -> float:
        return float(np.dot(self.weights, np.exp(self.log_busy)))


def _scan_support(logpdf, mean: float, sd: float):
    grid = np.linspace(max(mean - 8 * sd, 0.0), mean + 12 * sd, 2001)
    vals = logpdf(grid)
    k = int(np.argmax(vals))
    mode, peak = grid[k], vals[k]
    cut = peak + math.log(TRUNC_REL)
    h = sd / 16.0
    lo = mode
    while lo > 0.0 and logpdf(np.array([lo]))[0] > cut:
        lo -= h
    hi = mode
    while logpdf(np.array([hi]))[0] > cut:
        hi += h
    return max(lo, 0.0), hi


@lru_cache(maxsize=32)
def _z_rule_cached(N: int, noise: float, energy: float, panels: int, order: int) -> ZRule:
    cfg = SystemConfig(num_channels=1, sensing_fraction=0.01, theta=0.5,
                       detector_samples=N, noise_var=noise, pu_energy=energy)
    sd_f = noise / math.sqrt(N)
    # busy statistic variance: (sigma^2/2N)^2 * 2(2N + 2 * 2N E/sigma^2)
    sd_b = math.sqrt(noise ** 2 / N * (1.0 + 2.0 * energy / noise))
    lo_f, hi_f = _scan_support(lambda z: z_logpdf_free(z, cfg), noise, sd_f)
    lo_b, hi_b = _scan_support(lambda z: z_logpdf_busy(z, cfg), noise + energy, sd_b)
    lo, hi = min(lo_f, lo_b), max(hi_f, hi_b)
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return ZRule(nodes, weights, lo, hi, z_logpdf_free(nodes, cfg), z_logpdf_busy(nodes, cfg))


def z_rule(cfg: SystemConfig, panels: int = 96, order: int = 16) -> ZRule:
    """Cached quadrature rule for the detector statistic of ``cfg``."""
    return _z_rule_cached(cfg.detector_samples, float(cfg.noise_var), float(cfg.pu_energy),
                          panels, order)


# --------------------------------------------------------------------------
# Closed-form power and threshold functions
# --------------------------------------------------------------------------

def underlay_power(i: int, z, gamma, lam_i: float, lam_p: float, cfg: SystemConfig):
    """``(1/(lam_p + lam_i pi(z)) - 1/gamma)^+`` on channel ``i``."""
    mu = lam_p + lam_i * np.asarray(posterior_busy(i, z, cfg))
    g = np.asarray(gamma, dtype=float)
    with np.errstate(divide="ignore"):
        P = np.maximum(1.0 / mu - 1.0 / g, 0.0)
    return float(P) if P.ndim == 0 else P


def _multiplier(A: float, c: float) -> float:
    return 1.0 / -lambert_w0_negexp(max(A, 0.0) / c)


def underlay_threshold(i: int, z, lam_i: float, lam_p: float, lam_d: float, tails,
                       cfg: SystemConfig):
    """Optimal ``gamma_th(i, z)`` given the tails of channel ``i+1``.

    ``tails`` is anything with arrays ``U, I, S, p`` indexed so that entry
    ``i`` (0-based) holds channel ``i+1`` (e.g. an :class:`UnderlayPolicy`).
    """
    S_next = tails.S[i] if tails.S is not None else 0.0
    A = tails.U[i] - lam_i * tails.I[i] - lam_p * S_next - lam_d * (1.0 - tails.p[i])
    u = _multiplier(A, cfg.c[i - 1])
    mu = lam_p + lam_i * np.asarray(posterior_busy(i, z, cfg))
    out = mu * u
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# Policy and metrics
# --------------------------------------------------------------------------

@dataclass
class UnderlayPolicy:
    """Duals, per-stage Lambert multipliers and tails of an underlay policy.

    Thresholds are ``(lam_p + lam_i pi(z)) * multipliers[i-1]``; for a
    constant-power policy they are recomputed from the tails.
    """

    lambda_i: float
    lambda_p: float
    lambda_d: float
    multipliers: np.ndarray
    U: np.ndarray
    I: np.ndarray
    p: np.ndarray
    S: Optional[np.ndarray] = None
    const_power: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def metrics(self) -> Metrics:
        return Metrics(throughput=float(self.U[0]), success_prob=float(self.p[0]),
                       avg_power=None if self.S is None else float(self.S[0]),
                       interference=float(self.I[0]))

    def threshold(self, i: int, z, cfg: SystemConfig):
        pi = np.asarray(posterior_busy(i, z, cfg))
        if self.const_power is None:
            return (self.lambda_p + self.lambda_i * pi) * self.multipliers[i - 1]
        return _const_threshold_z(pi, self._A(i), cfg.c[i - 1], self.lambda_i,
                                  self.lambda_p, self.const_power)

    def power(self, i: int, z, gamma, cfg: SystemConfig):
        if self.const_power is not None:
            return np.full(np.shape(gamma), self.const_power)
        return underlay_power(i, z, gamma, self.lambda_i, self.lambda_p, cfg)

    def _A(self, i: int) -> float:
        S = 0.0 if self.S is None else self.S[i]
        return float(self.U[i] - self.lambda_i * self.I[i] - self.lambda_p * S
                     - self.lambda_d * (1.0 - self.p[i]))

    def to_dict(self) -> dict:
        return {
            "kind": "underlay",
            "lambda_i": self.lambda_i,
            "lambda_p": self.lambda_p,
            "lambda_d": self.lambda_d,
            "multipliers": list(map(float, self.multipliers)),
            "U": list(map(float, self.U)),
            "I": list(map(float, self.I)),
            "p": list(map(float, self.p)),
            "S": None if self.S is None else list(map(float, self.S)),
            "const_power": self.const_power,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UnderlayPolicy":
        arr = lambda k: None if d.get(k) is None else np.asarray(d[k], dtype=float)
        return cls(lambda_i=d["lambda_i"], lambda_p=d["lambda_p"], lambda_d=d["lambda_d"],
                   multipliers=arr("multipliers"), U=arr("U"), I=arr("I"), p=arr("p"),
                   S=arr("S"), const_power=d.get("const_power"), meta=dict(d.get("meta", {})))


def _const_threshold_z(pi, A: float, c: float, lam_i: float, lam_p: float, P: float):
    # (1/P)(exp((A + lam_I c P pi + lam_P c P)/c) - 1)^+
    return np.maximum(np.expm1((A + c * P * (lam_i * pi + lam_p)) / c), 0.0) / P


@dataclass
class _URec:
    lam_i: float
    lam_p: float
    u: np.ndarray
    U: np.ndarray
    I: np.ndarray
    S: np.ndarray
    p: np.ndarray


class _Underlay:
    """Precomputed per-channel quadrature data for one config."""

    def __init__(self, cfg: SystemConfig, const_power: Optional[float] = None,
                 baseline: bool = False):
        if cfg.inst_power_cap is not None and const_power is None:
            raise ValueError("the underlay solver does not support inst_power_cap")
        self.cfg = cfg
        self.law = ExponentialGain(cfg.mean_gain)
        self.const_power = const_power
        self.baseline = baseline
        rule = z_rule(cfg)
        self.rule = rule
        ff, fb = np.exp(rule.log_free), np.exp(rule.log_busy)
        self.w_marg, self.w_busy, self.pi = [], [], []
        for i, th in enumerate(cfg.theta, start=1):
            self.w_marg.append(rule.weights * (th * ff + (1.0 - th) * fb))
            self.w_busy.append(rule.weights * (1.0 - th) * fb)
            self.pi.append(np.asarray(posterior_busy(i, rule.nodes, cfg)))
        self.tail_mass = 1.0 - min(rule.free_mass, rule.busy_mass)

    def recurse(self, lam_i: float, lam_p: float, lam_d: float = 0.0) -> _URec:
        cfg, law = self.cfg, self.law
        M = cfg.num_channels
        c = cfg.c
        U, I, S, p = (np.zeros(M + 1) for _ in range(4))
        mult = np.empty(M)
        P = self.const_power
        for i in range(M - 1, -1, -1):
            A = U[i + 1] - lam_i * I[i + 1] - lam_p * S[i + 1] - lam_d * (1.0 - p[i + 1])
            pi = self.pi[i]
            if P is None:
                u = 1.0 if self.baseline else _multiplier(A, c[i])
                mu = np.maximum(lam_p + lam_i * pi, 1e-300)
                t = mu * u
                F = law.ccdf(t)
                rate = law.tail_log_ratio(t, mu)
                pw = F / mu - law.tail_inv(t)
            else:
                u = math.nan
                t = np.zeros_like(pi) if self.baseline else _const_threshold_z(pi, A, c[i], lam_i, lam_p, P)
                F = law.ccdf(t)
                rate = law.tail_log1p(t, P)
                pw = P * F
            mult[i] = u
            trans = float(np.dot(self.w_marg[i], F))
            skip = 1.0 - trans
            U[i] = c[i] * float(np.dot(self.w_marg[i], rate)) + skip * U[i + 1]
            I[i] = c[i] * float(np.dot(self.w_busy[i], pw)) + skip * I[i + 1]
            S[i] = c[i] * float(np.dot(self.w_marg[i], pw)) + skip * S[i + 1]
            p[i] = trans + skip * p[i + 1]
        return _URec(lam_i, lam_p, mult, U, I, S, p)


def underlay_metrics(lam_i: float, lam_p: float, lam_d: float, cfg: SystemConfig,
                     baseline: bool = False):
    """Analytic ``(U_1, I_1, p_1, S_1)`` and the full tails for fixed duals."""
    if not lam_i >= 0 or not lam_p >= 0 or not lam_d >= 0:
        raise ValueError("dual variables must be nonnegative")
    if lam_i == 0 and lam_p == 0:
        raise IllPosedError("lam_i and lam_p cannot both be zero (unbounded water level)")
    rec = _Underlay(cfg, baseline=baseline).recurse(lam_i, lam_p, lam_d)
    m = Metrics(throughput=float(rec.U[0]), success_prob=float(rec.p[0]),
                avg_power=float(rec.S[0]), interference=float(rec.I[0]))
    return m, rec


# --------------------------------------------------------------------------
# Dual search
# --------------------------------------------------------------------------

def _expand_up(f, start: float, limit: int = 200) -> float:
    """Smallest ``start * 2^k`` with ``f < 0``."""
    x = start
    for _ in range(limit):
        if f(x) < 0.0:
            return x
        x *= 2.0
    raise IllPosedError("no upper bracket found")


def _solve_duals(model: _Underlay, lam_d: float, knobs: SolverKnobs) -> _URec:
    cfg = model.cfg
    iavg, pavg = cfg.avg_interference_budget, cfg.avg_power_budget
    const = model.const_power is not None

    def inner(lam_i: float) -> _URec:
        if pavg is None:
            return model.recurse(lam_i, 0.0, lam_d)
        if lam_i > 0 or const:
            r0 = model.recurse(lam_i, 0.0, lam_d)
            if r0.S[0] <= pavg:
                return r0
        hi = _expand_up(lambda x: model.recurse(lam_i, x, lam_d).S[0] - pavg,
                        max(float(cfg.c[0]) / pavg, 1e-12))
        lam_p = bisect(lambda x: model.recurse(lam_i, x, lam_d).S[0] - pavg, 0.0, hi,
                       knobs.root_tol)
        if lam_p == 0.0 and lam_i == 0.0 and not const:
            lam_p = knobs.lambda_p_floor
        return model.recurse(lam_i, lam_p, lam_d)

    if iavg is None:
        if pavg is None:
            raise IllPosedError("underlay needs avg_interference_budget or avg_power_budget")
        return inner(0.0)
    if pavg is not None or const:
        r = inner(0.0)
        if r.I[0] <= iavg:
            return r
        lo = 0.0
    else:
        lo = 1.0
        while inner(lo).I[0] <= iavg:
            lo *= 0.5
            if lo < 1e-300:
                raise IllPosedError("interference constraint never binds")
    hi = _expand_up(lambda x: inner(x).I[0] - iavg, max(2.0 * lo, 1.0))
    lam_i = bisect(lambda x: inner(x).I[0] - iavg, lo, hi, knobs.root_tol)
    return inner(lam_i)


def _to_policy(rec: _URec, lam_d: float, model: _Underlay, meta: dict) -> UnderlayPolicy:
    cfg = model.cfg
    meta = dict(meta)
    if cfg.avg_interference_budget is not None:
        meta["interference_residual"] = float(rec.I[0] - cfg.avg_interference_budget)
    if cfg.avg_power_budget is not None:
        meta["power_residual"] = float(rec.S[0] - cfg.avg_power_budget)
    if cfg.delay_target is not None:
        meta["delay_residual"] = float(rec.p[0] - cfg.delay_target)
    meta["z_domain"] = [model.rule.lo, model.rule.hi]
    meta["z_tail_mass"] = model.tail_mass
    meta["baseline"] = model.baseline
    return UnderlayPolicy(lambda_i=rec.lam_i, lambda_p=rec.lam_p, lambda_d=lam_d,
                          multipliers=rec.u, U=rec.U, I=rec.I, p=rec.p, S=rec.S,
                          const_power=model.const_power, meta=meta)


def _solve(model: _Underlay, knobs: SolverKnobs) -> UnderlayPolicy:
    cfg = model.cfg
    target = cfg.delay_target
    cache: dict = {}

    def point_at(lam_d: float) -> _DualPoint:
        if lam_d not in cache:
            rec = _solve_duals(model, lam_d, knobs)
            cache[lam_d] = _DualPoint(lam_d, rec.lam_p, rec)
        return cache[lam_d]

    if target is not None and not model.baseline:
        floor = _Underlay(cfg, const_power=model.const_power, baseline=True)
        pmax = _solve_duals(floor, 0.0, knobs).p[0]
        if pmax < target:
            raise InfeasibleError(f"max attainable p_1={pmax:.6g} is below 1/Dmax={target:.6g}")
    if model.baseline:
        # floor thresholds ignore lambda_D entirely
        best, info = point_at(0.0), {"lambda_d_bound_source": "baseline"}
        if target is not None and best.p < target:
            raise InfeasibleError("baseline policy misses the delay target")
    else:
        best, info = select_lambda_d(point_at, target, None, knobs,
                                     start=max(point_at(0.0).U, 1e-3))
    info["evaluations"] = len(cache)
    return _to_policy(best.rec, best.lam_d, model, info)


def solve_underlay(cfg: SystemConfig, knobs: SolverKnobs = SolverKnobs(),
                   baseline: bool = False) -> UnderlayPolicy:
    """Maximize ``U^s_1`` under interference (and optional power/delay) budgets.

    ``baseline=True`` forces every threshold to its floor (transmit on the
    first channel whose gain clears the water level) and only re-solves the
    duals; it is the no-stopping-rule reference.
    """
    return _solve(_Underlay(cfg, baseline=baseline), knobs)


def constant_power_underlay_thresholds(P: float, lam_i: float, lam_d: float, cfg: SystemConfig,
                                       lam_p: float = 0.0) -> UnderlayPolicy:
    """Fixed-power underlay policy for given duals; use ``.threshold(i, z, cfg)``."""
    if not P > 0:
        raise ValueError("constant power must be positive")
    model = _Underlay(cfg, const_power=P)
    rec = model.recurse(lam_i, lam_p, lam_d)
    return _to_policy(rec, lam_d, model, {})


def solve_constant_power_underlay(cfg: SystemConfig, P: float,
                                  knobs: SolverKnobs = SolverKnobs()) -> UnderlayPolicy:
    """Underlay solve for a two-level (0 or ``P``) transmitter."""
    if not P > 0:
        raise ValueError("constant power must be positive")
    return _solve(_Underlay(cfg, const_power=P), knobs)
