"""Overlay stopping-rule and power-control solver.

The SU senses channels 1..M in order and stops at the first free channel
whose gain beats that channel's threshold. For fixed dual variables the
optimal thresholds follow from a backward recursion with a Lambert-W
closed form; the power dual is found by bisection on the average-power
constraint and the delay dual by a sweep.

The recursion engine here is shared with the multi-user and sensing-error
evaluators: a stage is described by an access weight ``w_i`` (the
probability that the SU may use channel ``i``), ``c_i`` and a gain law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BracketError, IllPosedError, InfeasibleError
from .model import ExponentialGain, SystemConfig, gain_ccdf_inv, gain_law
from .numerics import ROOT_TOL, Tolerance, bisect, lambert_w0_negexp

__all__ = [
    "Metrics",
    "Recursion",
    "OverlayPolicy",
    "SolverKnobs",
    "waterfill_power",
    "evaluate_policy",
    "threshold_backsolve",
    "solve_lambda_p",
    "lambda_d_upper_bound",
    "p2_max",
    "select_lambda_d",
    "solve_overlay",
    "max_success_policy",
    "throughput_with_sensing_errors",
    "constant_power_thresholds",
    "solve_constant_power",
    "lagrangian",
]


@dataclass(frozen=True)
class Metrics:
    """Analytic per-slot performance of a policy.

    Throughput is in nats per slot. ``expected_delay`` is None when the
    success probability is zero (every slot blocked).
    """

    throughput: float
    success_prob: float
    avg_power: Optional[float] = None
    interference: Optional[float] = None

    @property
    def blocked(self) -> bool:
        return not self.success_prob > 0.0

    @property
    def expected_delay(self) -> Optional[float]:
        return None if self.blocked else 1.0 / self.success_prob

    def to_dict(self) -> dict:
        return {
            "throughput": self.throughput,
            "avg_power": self.avg_power,
            "interference": self.interference,
            "success_prob": self.success_prob,
            "expected_delay": self.expected_delay,
            "blocked": self.blocked,
        }


@dataclass
class Recursion:
    """Thresholds plus tail values ``U_i, S_i, p_i`` for i = 1..M+1 (0-based arrays)."""

    thresholds: np.ndarray
    U: np.ndarray
    S: np.ndarray
    p: np.ndarray

    def metrics(self) -> Metrics:
        return Metrics(throughput=float(self.U[0]), success_prob=float(self.p[0]),
                       avg_power=float(self.S[0]))


@dataclass(frozen=True)
class SolverKnobs:
    """Numerical settings of the dual search (reported in run manifests)."""

    lambda_d_grid: int = 64
    lambda_d_rtol: float = 1e-10
    lambda_p_floor: float = 1e-8
    root_tol: Tolerance = ROOT_TOL
    max_doublings: int = 80


@dataclass
class OverlayPolicy:
    """Solved (or evaluated) overlay stopping rule.

    ``const_power`` is set for two-level transmitters; otherwise the power
    is water-filling at level ``1/lambda_p`` capped at ``inst_power_cap``.
    """

    lambda_p: float
    lambda_d: float
    thresholds: np.ndarray
    U: np.ndarray
    S: np.ndarray
    p: np.ndarray
    inst_power_cap: Optional[float] = None
    const_power: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def metrics(self) -> Metrics:
        return Metrics(throughput=float(self.U[0]), success_prob=float(self.p[0]),
                       avg_power=float(self.S[0]))

    def power(self, i: int, gamma):
        """Transmit power on channel ``i`` (1-based) at gain ``gamma``."""
        gamma = np.asarray(gamma, dtype=float)
        if self.const_power is not None:
            return np.full_like(gamma, self.const_power)
        return waterfill_power(gamma, self.lambda_p, self.inst_power_cap)

    def to_dict(self) -> dict:
        return {
            "kind": "overlay",
            "lambda_p": self.lambda_p,
            "lambda_d": self.lambda_d,
            "thresholds": list(map(float, self.thresholds)),
            "U": list(map(float, self.U)),
            "S": list(map(float, self.S)),
            "p": list(map(float, self.p)),
            "inst_power_cap": self.inst_power_cap,
            "const_power": self.const_power,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OverlayPolicy":
        return cls(lambda_p=d["lambda_p"], lambda_d=d["lambda_d"],
                   thresholds=np.asarray(d["thresholds"], dtype=float),
                   U=np.asarray(d["U"], dtype=float), S=np.asarray(d["S"], dtype=float),
                   p=np.asarray(d["p"], dtype=float), inst_power_cap=d.get("inst_power_cap"),
                   const_power=d.get("const_power"), meta=dict(d.get("meta", {})))


def waterfill_power(gamma, lam_p: float, pmax: Optional[float] = None):
    """``(1/lam_p - 1/gamma)^+``, clipped at ``pmax`` when given."""
    g = np.asarray(gamma, dtype=float)
    with np.errstate(divide="ignore"):
        P = np.maximum(1.0 / lam_p - 1.0 / g, 0.0)
    if pmax is not None:
        P = np.minimum(P, pmax)
    return float(P) if P.ndim == 0 else P


# --------------------------------------------------------------------------
# Stage integrals and the backward recursion
# --------------------------------------------------------------------------

def _waterfill_terms(law, t: float, lam: float, pmax: Optional[float]):
    """(ccdf(t), rate integral, power integral) for water-filling above ``t``."""
    a = max(t, lam)
    F = float(law.ccdf(t))
    rate = float(law.tail_log_ratio(a, lam))
    Fa = float(law.ccdf(a))
    pw = Fa / lam - float(law.tail_inv(a))
    if pmax is not None and 1.0 / lam > pmax:
        b = max(a, 1.0 / (1.0 / lam - pmax))
        Fb = float(law.ccdf(b))
        rate += float(law.tail_log1p(b, pmax)) - float(law.tail_log_ratio(b, lam))
        pw += pmax * Fb - (Fb / lam - float(law.tail_inv(b)))
    return F, rate, pw


def _const_terms(law, t: float, P: float):
    F = float(law.ccdf(t))
    return F, float(law.tail_log1p(max(t, 0.0), P)), P * F


def _waterfill_threshold(A: float, c: float, lam: float, pmax: Optional[float]) -> float:
    # gamma_th / lam = -1 / W0(-exp(-A+/c - 1))
    s = max(A, 0.0) / c
    t = lam / -lambert_w0_negexp(s)
    if pmax is not None and 1.0 / lam > pmax:
        # the cap binds at the stopping point: log(1 + Pmax t) - lam Pmax = A+/c
        if t > 1.0 / (1.0 / lam - pmax):
            t = math.expm1(s + lam * pmax) / pmax
    return t


def _const_threshold(A: float, c: float, lam: float, P: float) -> float:
    return max(math.expm1((A + lam * c * P) / c), 0.0) / P


def _recurse(weights: np.ndarray, c: np.ndarray, law, lam_p: float, lam_d: float = 0.0,
             pmax: Optional[float] = None, const_power: Optional[float] = None,
             thresholds: Optional[Sequence[float]] = None, pinned: bool = False) -> Recursion:
    M = len(c)
    U = np.zeros(M + 1)
    S = np.zeros(M + 1)
    p = np.zeros(M + 1)
    th = np.empty(M)
    for i in range(M - 1, -1, -1):
        A = U[i + 1] - lam_p * S[i + 1] - lam_d * (1.0 - p[i + 1])
        if thresholds is not None:
            t = float(thresholds[i])
        elif const_power is not None:
            t = 0.0 if pinned else _const_threshold(A, c[i], lam_p, const_power)
        else:
            t = lam_p if pinned else _waterfill_threshold(A, c[i], lam_p, pmax)
        if const_power is None:
            F, r, q = _waterfill_terms(law, t, lam_p, pmax)
        else:
            F, r, q = _const_terms(law, t, const_power)
        w = weights[i]
        skip = 1.0 - w * F
        U[i] = w * c[i] * r + skip * U[i + 1]
        S[i] = w * c[i] * q + skip * S[i + 1]
        p[i] = w * F + skip * p[i + 1]
        th[i] = t
    return Recursion(th, U, S, p)


@dataclass
class _Problem:
    """One instance of the overlay-type problem (also used for multi-SU)."""

    weights: np.ndarray
    c: np.ndarray
    law: object
    pavg: Optional[float]
    pmax: Optional[float] = None
    const_power: Optional[float] = None
    target: Optional[float] = None
    theta_c_sum: float = 0.0

    @classmethod
    def overlay(cls, cfg: SystemConfig, const_power: Optional[float] = None) -> "_Problem":
        th = cfg.theta_arr
        return cls(weights=th, c=cfg.c, law=ExponentialGain(cfg.mean_gain),
                   pavg=cfg.avg_power_budget, pmax=cfg.inst_power_cap,
                   const_power=const_power, target=cfg.delay_target,
                   theta_c_sum=float(np.dot(th, cfg.c)))

    @property
    def lam_p_max(self) -> float:
        return self.theta_c_sum / self.pavg

    def recurse(self, lam_p: float, lam_d: float = 0.0, pinned: bool = False) -> Recursion:
        return _recurse(self.weights, self.c, self.law, lam_p, lam_d, self.pmax,
                        self.const_power, pinned=pinned)


# --------------------------------------------------------------------------
# Public evaluators
# --------------------------------------------------------------------------

def evaluate_policy(thresholds: Sequence[float], lam_p: float, cfg: SystemConfig,
                    pmax: Optional[float] = None) -> tuple[Metrics, Recursion]:
    """Analytic (U_1, S_1, p_1) of an arbitrary threshold vector under water-filling."""
    if len(thresholds) != cfg.num_channels:
        raise ValueError("thresholds must have one entry per channel")
    if not lam_p > 0:
        raise ValueError("lam_p must be positive")
    rec = _recurse(cfg.theta_arr, cfg.c, ExponentialGain(cfg.mean_gain), lam_p,
                   pmax=pmax, thresholds=thresholds)
    return rec.metrics(), rec


def threshold_backsolve(lam_p: float, lam_d: float, cfg: SystemConfig,
                        pmax: Optional[float] = None) -> Recursion:
    """Optimal thresholds for fixed duals by back-substitution from channel M."""
    if not lam_p > 0:
        raise ValueError("lam_p must be positive")
    return _recurse(cfg.theta_arr, cfg.c, ExponentialGain(cfg.mean_gain), lam_p, lam_d,
                    pmax if pmax is not None else cfg.inst_power_cap)


def lagrangian(rec: Recursion, lam_p: float, lam_d: float) -> float:
    """``U_1 - lam_p S_1 - lam_d (1 - p_1)`` (constant budget terms dropped)."""
    return float(rec.U[0] - lam_p * rec.S[0] - lam_d * (1.0 - rec.p[0]))


# --------------------------------------------------------------------------
# Dual search
# --------------------------------------------------------------------------

@dataclass
class _LambdaP:
    lam_p: float
    rec: Recursion
    power_slack: bool = False


def _solve_lambda_p(prob: _Problem, lam_d: float, knobs: SolverKnobs,
                    pinned: bool = False) -> _LambdaP:
    if prob.pavg is None:
        raise IllPosedError("avg_power_budget is required for the power-dual search")
    pavg = prob.pavg
    hi = prob.lam_p_max

    def excess(lam):
        return prob.recurse(lam, lam_d, pinned).S[0] - pavg

    if excess(hi) >= 0.0:
        raise BracketError(f"S_1 at the upper bound lam_p={hi:.6g} already meets Pavg")
    lo = 0.5 * hi
    while excess(lo) <= 0.0:
        if lo <= knobs.lambda_p_floor:
            if prob.pmax is None:
                raise IllPosedError("power constraint never binds; an inst_power_cap is required")
            return _LambdaP(lo, prob.recurse(lo, lam_d, pinned), power_slack=True)
        lo = max(0.5 * lo, knobs.lambda_p_floor) if prob.pmax is not None else 0.5 * lo
        if lo < 1e-290:
            raise IllPosedError("no lam_p found with S_1 above Pavg")
    lam = bisect(excess, lo, hi, knobs.root_tol)
    return _LambdaP(lam, prob.recurse(lam, lam_d, pinned))


def solve_lambda_p(lam_d: float, cfg: SystemConfig, knobs: SolverKnobs = SolverKnobs()) -> float:
    """Power dual ``lam_p*`` meeting ``S_1 = Pavg`` for a fixed delay dual."""
    return _solve_lambda_p(_Problem.overlay(cfg), lam_d, knobs).lam_p


def p2_max(theta: Sequence[float]) -> float:
    """Upper bound on the success probability from channel 2 onward."""
    total, stay = 0.0, 1.0
    for th in theta[1:]:
        total += stay * th
        stay *= 1.0 - th
    return total


def lambda_d_upper_bound(cfg: SystemConfig, lam_p_max: float) -> float:
    """Upper bound on the optimal delay dual (requires ``theta_1 Dmax > 1``)."""
    if cfg.max_mean_delay is None:
        raise ValueError("lambda_d_upper_bound needs max_mean_delay")
    th = cfg.theta
    arg = 1.0 / (th[0] * cfg.max_mean_delay) if th[0] > 0 else math.inf
    if arg >= 1.0:
        raise InfeasibleError("theta_1 * Dmax <= 1: the delay bound on channel 1 cannot be inverted")
    x0 = float(gain_ccdf_inv(arg, cfg.mean_gain))
    r = min(lam_p_max, x0) / x0
    c = cfg.c
    law = ExponentialGain(cfg.mean_gain)
    u2 = float(law.tail_log_ratio(lam_p_max, lam_p_max)) * float(np.dot(th[1:], c[1:]))
    denom = 1.0 - p2_max(th)
    if denom <= 0.0:
        return math.inf
    return (c[0] * (math.log(r) - r + 1.0) + u2) / denom


@dataclass
class _DualPoint:
    lam_d: float
    lam_p: float
    rec: object
    power_slack: bool = False

    @property
    def U(self) -> float:
        return float(self.rec.U[0])

    @property
    def p(self) -> float:
        return float(self.rec.p[0])


def select_lambda_d(point_at: Callable[[float], _DualPoint], target: Optional[float],
                    lam_d_max: Optional[float], knobs: SolverKnobs = SolverKnobs(),
                    start: float = 1.0):
    """Pick the delay dual by complementary slackness and a grid-plus-bisection sweep.

    Returns ``(point, info)``. ``lam_d_max`` may be None or infinite, in
    which case an upper bracket is found by doubling from ``start``.
    """
    p0 = point_at(0.0)
    info = {"lambda_d_grid": knobs.lambda_d_grid}
    if target is None or p0.p >= target:
        info.update(lambda_d_max=lam_d_max, lambda_d_bound_source="slack", roots=0)
        return p0, info

    source = "closed_form"
    if lam_d_max is None or not math.isfinite(lam_d_max) or lam_d_max <= 0.0:
        source = "doubling"
        lam = max(start, 1e-6)
        for _ in range(knobs.max_doublings):
            if point_at(lam).p >= target:
                break
            lam *= 2.0
        else:
            raise InfeasibleError("delay target not reached for any lambda_d")
        lam_d_max = 2.0 * lam

    for attempt in range(knobs.max_doublings):
        grid = lam_d_max * np.arange(knobs.lambda_d_grid) / knobs.lambda_d_grid
        pts = [p0] + [point_at(float(x)) for x in grid[1:]]
        gaps = [pt.p - target for pt in pts]
        roots = []
        for k in range(len(pts)):
            nxt_gap = gaps[k + 1] if k + 1 < len(pts) else None
            if gaps[k] >= 0.0 and (k == 0 or gaps[k - 1] < 0.0) and nxt_gap is None:
                roots.append(pts[k])
            if nxt_gap is None or (gaps[k] < 0.0) == (nxt_gap < 0.0):
                continue
            lo, hi = pts[k], pts[k + 1]
            while hi.lam_d - lo.lam_d > knobs.lambda_d_rtol * lam_d_max:
                mid = point_at(0.5 * (lo.lam_d + hi.lam_d))
                if (mid.p < target) == (lo.p < target):
                    lo = mid
                else:
                    hi = mid
            roots.append(lo if lo.p >= target else hi)
        if roots:
            best = max(roots, key=lambda pt: pt.U)
            info.update(lambda_d_max=lam_d_max, lambda_d_bound_source=source, roots=len(roots))
            return best, info
        # bound too small for this instance: widen and record it
        source = f"{source}+extended"
        lam_d_max *= 2.0
    raise InfeasibleError("no lambda_d meets the delay target")


def max_success_policy(cfg: SystemConfig, knobs: SolverKnobs = SolverKnobs(),
                       const_power: Optional[float] = None) -> OverlayPolicy:
    """Policy with every threshold at its floor (the largest attainable p_1)."""
    prob = _Problem.overlay(cfg, const_power)
    if const_power is None:
        lp = _solve_lambda_p(prob, 0.0, knobs, pinned=True)
    else:
        lp = _const_lambda_p(prob, 0.0, knobs, pinned=True)
    return _to_policy(lp.rec, lp.lam_p, math.inf, prob, {"max_success": True,
                                                           "power_slack": lp.power_slack})


def _to_policy(rec: Recursion, lam_p: float, lam_d: float, prob: _Problem, meta: dict) -> OverlayPolicy:
    meta = dict(meta)
    if prob.pavg is not None:
        meta["power_residual"] = float(rec.S[0] - prob.pavg)
    if prob.target is not None:
        meta["delay_residual"] = float(rec.p[0] - prob.target)
    return OverlayPolicy(lambda_p=lam_p, lambda_d=lam_d, thresholds=rec.thresholds, U=rec.U,
                         S=rec.S, p=rec.p, inst_power_cap=prob.pmax,
                         const_power=prob.const_power, meta=meta)


def _solve_problem(prob: _Problem, cfg: SystemConfig, knobs: SolverKnobs,
                   lam_p_solver, use_dual_bound: bool) -> OverlayPolicy:
    cache: dict = {}

    def point_at(lam_d: float) -> _DualPoint:
        if lam_d not in cache:
            lp = lam_p_solver(prob, lam_d, knobs)
            cache[lam_d] = _DualPoint(lam_d, lp.lam_p, lp.rec, lp.power_slack)
        return cache[lam_d]

    lam_d_max = None
    if prob.target is not None:
        floor = lam_p_solver(prob, 0.0, knobs, pinned=True)
        if floor.rec.p[0] < prob.target:
            raise InfeasibleError(
                f"max attainable p_1={floor.rec.p[0]:.6g} is below 1/Dmax={prob.target:.6g}")
        if use_dual_bound:
            try:
                lam_d_max = lambda_d_upper_bound(cfg, prob.lam_p_max)
            except InfeasibleError:
                lam_d_max = None
    best, info = select_lambda_d(point_at, prob.target, lam_d_max, knobs,
                                 start=max(point_at(0.0).U, 1e-3))
    info["power_slack"] = best.power_slack
    info["evaluations"] = len(cache)
    return _to_policy(best.rec, best.lam_p, best.lam_d, prob, info)


def solve_overlay(cfg: SystemConfig, knobs: SolverKnobs = SolverKnobs()) -> OverlayPolicy:
    """Maximize U_1 subject to ``S_1 <= Pavg`` and ``p_1 >= 1/Dmax``."""
    prob = _Problem.overlay(cfg)
    return _solve_problem(prob, cfg, knobs, _solve_lambda_p, use_dual_bound=True)


# --------------------------------------------------------------------------
# Sensing errors and constant power
# --------------------------------------------------------------------------

def throughput_with_sensing_errors(policy: OverlayPolicy, cfg: SystemConfig) -> float:
    """Throughput of a fixed overlay policy when sensing is imperfect.

    A channel is used when sensed free, which happens with probability
    ``theta(1 - Pfa) + (1 - theta) Pmd``; missed detections transmit at
    the full rate.
    """
    th = cfg.theta_arr
    q = th * (1.0 - cfg.false_alarm) + (1.0 - th) * cfg.missed_detection
    rec = _recurse(q, cfg.c, ExponentialGain(cfg.mean_gain), policy.lambda_p,
                   pmax=policy.inst_power_cap, const_power=policy.const_power,
                   thresholds=policy.thresholds)
    return float(rec.U[0])


def constant_power_thresholds(P: float, lam_p: float, lam_d: float, cfg: SystemConfig) -> Recursion:
    """Thresholds and tails for a transmitter that always uses power ``P``."""
    if not P > 0:
        raise ValueError("constant power must be positive")
    return _recurse(cfg.theta_arr, cfg.c, ExponentialGain(cfg.mean_gain), lam_p, lam_d,
                    const_power=P)


def _const_lambda_p(prob: _Problem, lam_d: float, knobs: SolverKnobs,
                    pinned: bool = False) -> _LambdaP:
    if prob.pavg is None:
        return _LambdaP(0.0, prob.recurse(0.0, lam_d, pinned), power_slack=True)
    r0 = prob.recurse(0.0, lam_d, pinned)
    if r0.S[0] <= prob.pavg:
        return _LambdaP(0.0, r0, power_slack=True)
    if pinned:
        # thresholds do not depend on lam_p, so the budget cannot be met
        raise InfeasibleError("constant power with zero thresholds exceeds Pavg")
    hi = max(prob.lam_p_max, 1.0)
    for _ in range(knobs.max_doublings):
        if prob.recurse(hi, lam_d).S[0] < prob.pavg:
            break
        hi *= 2.0
    lam = bisect(lambda x: prob.recurse(x, lam_d).S[0] - prob.pavg, 0.0, hi, knobs.root_tol)
    return _LambdaP(lam, prob.recurse(lam, lam_d))


def solve_constant_power(cfg: SystemConfig, P: float,
                         knobs: SolverKnobs = SolverKnobs()) -> OverlayPolicy:
    """Overlay solve for a two-level (0 or ``P``) transmitter."""
    if not P > 0:
        raise ValueError("constant power must be positive")
    prob = _Problem.overlay(cfg, const_power=P)
    return _solve_problem(prob, cfg, knobs, _const_lambda_p, use_dual_bound=False)
