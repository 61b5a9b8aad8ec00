"""Multi-user downlink extension of the overlay solver.

A base station serves ``L`` SUs. On a free channel it compares the best
user's gain with the stage threshold and, if it is high enough, grants the
channel to that user. Per-user metrics follow the overlay recursion with
access weight ``theta_i / L`` and the max-of-``L`` gain law.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleError
from .model import MaxGain, SystemConfig
from .overlay import (Metrics, OverlayPolicy, SolverKnobs, _Problem, _recurse,
                      _solve_lambda_p, _solve_problem, _to_policy, _waterfill_terms)

__all__ = ["MultiSuPolicy", "multi_su_metrics", "solve_multi_su", "exact_is_feasible",
           "ASYMPTOTIC_RATIO"]

ASYMPTOTIC_RATIO = 10


@dataclass
class MultiSuPolicy(OverlayPolicy):
    """Overlay-shaped policy with the user count and solve mode attached."""

    num_users: int = 1
    asymptotic: bool = False
    gumbel: bool = False

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update(kind="multi_su", num_users=self.num_users, asymptotic=self.asymptotic,
                 gumbel=self.gumbel)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MultiSuPolicy":
        base = OverlayPolicy.from_dict(d)
        return cls(**base.__dict__, num_users=int(d.get("num_users", 1)),
                   asymptotic=bool(d.get("asymptotic", False)), gumbel=bool(d.get("gumbel", False)))


def _problem(cfg: SystemConfig, gumbel: bool) -> _Problem:
    L = cfg.num_users
    th = cfg.theta_arr
    return _Problem(weights=th / L, c=cfg.c, law=MaxGain(cfg.mean_gain, L, gumbel),
                    pavg=cfg.avg_power_budget, pmax=cfg.inst_power_cap,
                    target=cfg.delay_target, theta_c_sum=float(np.dot(th, cfg.c)))


def _shrinking_pool(thresholds, lam_p: float, cfg: SystemConfig, gumbel: bool):
    # U^l_i with l users still competing; a grant that goes to another
    # user (probability 1 - 1/l) leaves l - 1 competitors
    M, L = cfg.num_channels, cfg.num_users
    c, th = cfg.c, cfg.theta_arr
    pmax = cfg.inst_power_cap
    ls = range(max(L - M, 1), L + 1)
    nxt = {l: np.zeros(3) for l in ls}
    for i in range(M - 1, -1, -1):
        cur = {}
        for l in ls:
            law = MaxGain(cfg.mean_gain, l, gumbel)
            F, r, q = _waterfill_terms(law, float(thresholds[i]), lam_p, pmax)
            grant = th[i] * F
            served = np.array([c[i] * r, c[i] * q, 1.0]) * th[i] / l
            stay = nxt[l - 1] if l - 1 in nxt else np.zeros(3)
            cur[l] = served + grant * (1.0 - 1.0 / l) * stay + (1.0 - grant) * nxt[l]
        nxt = cur
    return nxt[L]


def multi_su_metrics(thresholds: Sequence[float], lam_p: float, cfg: SystemConfig,
                     gumbel: bool = False, pool: str = "fixed") -> Metrics:
    """Per-user ``(U^L_1, S^L_1, p^L_1)`` of a threshold vector.

    ``pool="fixed"`` keeps ``L`` competitors at every stage (the large-``L``
    approximation); ``pool="shrinking"`` tracks the number of users still
    waiting for a channel.
    """
    if len(thresholds) != cfg.num_channels:
        raise ValueError("thresholds must have one entry per channel")
    if pool == "fixed":
        prob = _problem(cfg, gumbel)
        rec = _recurse(prob.weights, prob.c, prob.law, lam_p, pmax=prob.pmax,
                       thresholds=thresholds)
        return rec.metrics()
    if pool == "shrinking":
        U, S, p = _shrinking_pool(thresholds, lam_p, cfg, gumbel)
        return Metrics(throughput=float(U), success_prob=float(p), avg_power=float(S))
    raise ValueError("pool must be 'fixed' or 'shrinking'")


def solve_multi_su(cfg: SystemConfig, mode: Optional[str] = None, gumbel: bool = False,
                   knobs: SolverKnobs = SolverKnobs(),
                   asymptotic_ratio: int = ASYMPTOTIC_RATIO) -> MultiSuPolicy:
    """Per-user throughput maximization for ``cfg.num_users`` SUs.

    ``mode="exact"`` runs the full dual search with the Lambert-W
    thresholds. ``mode="asymptotic"`` pins every threshold to ``lambda_P``,
    which maximizes the success probability, so no delay dual is needed;
    a delay target it cannot reach is reported in ``meta`` rather than
    raised. The default is asymptotic when ``L >= asymptotic_ratio * M``.
    """
    L, M = cfg.num_users, cfg.num_channels
    if mode is None:
        mode = "asymptotic" if L >= asymptotic_ratio * M else "exact"
    if mode not in ("exact", "asymptotic"):
        raise ValueError("mode must be 'exact' or 'asymptotic'")
    prob = _problem(cfg, gumbel)
    if mode == "exact":
        pol = _solve_problem(prob, cfg, knobs, _solve_lambda_p, use_dual_bound=False)
    else:
        lp = _solve_lambda_p(prob, 0.0, knobs, pinned=True)
        meta = {"power_slack": lp.power_slack}
        if prob.target is not None:
            meta["delay_feasible"] = bool(lp.rec.p[0] >= prob.target)
        pol = _to_policy(lp.rec, lp.lam_p, 0.0, prob, meta)
    pol.meta["mode"] = mode
    return MultiSuPolicy(**pol.__dict__, num_users=L, asymptotic=mode == "asymptotic",
                         gumbel=gumbel)


def exact_is_feasible(cfg: SystemConfig, gumbel: bool = False,
                      knobs: SolverKnobs = SolverKnobs()) -> bool:
    """Whether the per-user delay target can be met at all."""
    if cfg.delay_target is None:
        return True
    try:
        lp = _solve_lambda_p(_problem(cfg, gumbel), 0.0, knobs, pinned=True)
    except InfeasibleError:
        return False
    return bool(lp.rec.p[0] >= cfg.delay_target)
