"""Frame deadlines: K packets must leave within t_f slots with probability r_min.

With a constant per-slot success probability ``p`` the number of delivered
packets is binomial, so the frame QoS maps to a per-slot bound
``p >= p*`` and therefore to ``Dmax = 1/p*``. The offline scheme solves
once; the online scheme re-solves with the remaining packets and slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

from .errors import InfeasibleError
from .model import SystemConfig
from .overlay import OverlayPolicy, SolverKnobs, max_success_policy, solve_overlay

__all__ = [
    "FrameSpec",
    "OnlineState",
    "PolicyCache",
    "frame_success_prob",
    "required_success_prob",
    "equivalent_max_delay",
    "solve_offline",
    "online_step",
    "frame_stats",
]


@dataclass(frozen=True)
class FrameSpec:
    """``K`` packets, a deadline of ``t_f`` slots and a target frame success rate."""

    packets_per_frame: int
    frame_deadline: int
    min_success: float

    def __post_init__(self):
        K, tf = self.packets_per_frame, self.frame_deadline
        if int(K) != K or K < 1 or int(tf) != tf or tf < 1:
            raise ValueError("packets_per_frame and frame_deadline must be positive integers")
        if not tf > K:
            raise ValueError("frame_deadline must exceed packets_per_frame")
        if not 0.0 <= self.min_success < 1.0:
            raise ValueError("min_success must lie in [0, 1)")


def frame_success_prob(K: int, t_f: int, p: float) -> float:
    """``Pr[Binomial(t_f, p) >= K]``."""
    if not 0 <= K <= t_f:
        raise ValueError("need 0 <= K <= t_f")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be a probability")
    if K == 0:
        return 1.0
    q = 1.0 - p
    return math.fsum(math.comb(t_f, n) * p ** n * q ** (t_f - n) for n in range(K, t_f + 1))


def required_success_prob(K: int, t_f: int, r_min: float) -> float:
    """Smallest per-slot ``p`` whose frame success reaches ``r_min``.

    Bisection on [0, 1]; the returned point is the upper end of the final
    bracket so ``frame_success_prob(K, t_f, p) >= r_min`` always holds.
    """
    if not 0 <= K <= t_f:
        raise ValueError("need 0 <= K <= t_f")
    if K == 0 or r_min <= 0.0:
        return 0.0
    if r_min > 1.0:
        raise InfeasibleError("r_min above 1 is unattainable")
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if frame_success_prob(K, t_f, mid) >= r_min:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15:
            break
    return hi


def equivalent_max_delay(K: int, t_f: int, r_min: float) -> Optional[float]:
    """``1/p*``, or None when the frame constraint imposes nothing."""
    p = required_success_prob(K, t_f, r_min)
    return None if p <= 0.0 else 1.0 / p


def solve_offline(cfg: SystemConfig, frame: FrameSpec,
                  knobs: SolverKnobs = SolverKnobs()) -> OverlayPolicy:
    """One overlay solve with ``Dmax = 1/p*``, reused in every slot of the frame."""
    dmax = equivalent_max_delay(frame.packets_per_frame, frame.frame_deadline, frame.min_success)
    pol = solve_overlay(cfg.replace(max_mean_delay=dmax), knobs)
    pol.meta["frame_required_p"] = None if dmax is None else 1.0 / dmax
    return pol


class PolicyCache:
    """Online policies keyed by (packets left, slots left), solved on demand."""

    def __init__(self, cfg: SystemConfig, frame: FrameSpec, knobs: SolverKnobs = SolverKnobs()):
        self.cfg = cfg
        self.frame = frame
        self.knobs = knobs
        self._table: Dict[object, OverlayPolicy] = {}

    def get(self, k: int, n: int) -> OverlayPolicy:
        key = (k, n)
        if key not in self._table:
            dmax = equivalent_max_delay(k, n, self.frame.min_success)
            try:
                pol = solve_overlay(self.cfg.replace(max_mean_delay=dmax), self.knobs)
                pol.meta["qos_risk"] = False
            except InfeasibleError:
                pol = max_success_policy(self.cfg, self.knobs)
                pol.meta["qos_risk"] = True
            pol.meta["frame_required_p"] = None if dmax is None else 1.0 / dmax
            self._table[key] = pol
        return self._table[key]

    def free(self) -> OverlayPolicy:
        """Unconstrained policy used once the frame outcome is decided."""
        if "free" not in self._table:
            pol = solve_overlay(self.cfg.replace(max_mean_delay=None), self.knobs)
            pol.meta["qos_risk"] = False
            self._table["free"] = pol
        return self._table["free"]

    def fill(self) -> "PolicyCache":
        """Solve every reachable live state up front."""
        K, tf = self.frame.packets_per_frame, self.frame.frame_deadline
        for n in range(1, tf + 1):
            for k in range(1, min(K, n) + 1):
                self.get(k, n)
        self.free()
        return self

    def __len__(self):
        return len(self._table)


@dataclass(frozen=True)
class OnlineState:
    """Frame progress before slot ``slot`` (1-based)."""

    slot: int
    remaining: int
    slot_count: int = 0
    policy: Optional[OverlayPolicy] = None
    outcome: Optional[bool] = None
    qos_risk: bool = False
    history: tuple = field(default=())

    @property
    def slots_left(self) -> int:
        return self.slot_count - self.slot + 1

    @property
    def done(self) -> bool:
        return self.outcome is not None

    def advance(self, success: bool) -> "OnlineState":
        """State at the next slot after observing this slot's result."""
        if self.done:
            return self
        k = self.remaining - (1 if success else 0)
        p = None if self.policy is None else float(self.policy.p[0])
        return replace(self, slot=self.slot + 1, remaining=k, policy=None,
                       history=self.history + ((self.slot, bool(success), p),))

    @classmethod
    def start(cls, frame: FrameSpec) -> "OnlineState":
        return cls(slot=1, remaining=frame.packets_per_frame, slot_count=frame.frame_deadline)


def online_step(state: OnlineState, cfg: SystemConfig, frame: FrameSpec,
                cache: Optional[PolicyCache] = None) -> OnlineState:
    """Attach the slot policy for the current state, or declare the outcome."""
    if state.done:
        return state
    n = frame.frame_deadline - state.slot + 1
    if state.remaining == 0:
        return replace(state, policy=None, outcome=True)
    if state.remaining > n:
        return replace(state, policy=None, outcome=False)
    cache = cache if cache is not None else PolicyCache(cfg, frame)
    pol = cache.get(state.remaining, n)
    return replace(state, policy=pol, qos_risk=state.qos_risk or bool(pol.meta.get("qos_risk")))


def frame_stats(cfg: SystemConfig, frame: FrameSpec, scheme: str = "online",
                cache: Optional["PolicyCache"] = None, offline: Optional[OverlayPolicy] = None,
                after: str = "idle"):
    """Exact frame success probability and throughput per slot of a scheme.

    By default (``after="idle"``) nothing is sent once the frame outcome is
    decided, since the frame has no packets left to serve. With
    ``after="free"`` the SU is treated as backlogged: the offline scheme
    keeps its single policy for all ``t_f`` slots and the online scheme
    switches to the unconstrained policy.
    """
    if after not in ("free", "idle"):
        raise ValueError("after must be 'free' or 'idle'")
    K, tf = frame.packets_per_frame, frame.frame_deadline
    if scheme == "offline":
        offline = offline if offline is not None else solve_offline(cfg, frame)
        pick = lambda k, n: offline
        tail_u = float(offline.U[0])
    elif scheme == "online":
        cache = cache if cache is not None else PolicyCache(cfg, frame)
        pick = cache.get
        tail_u = float(cache.free().U[0])
    else:
        raise ValueError("scheme must be 'online' or 'offline'")
    if after == "idle":
        tail_u = 0.0
    memo: Dict[Tuple[int, int], Tuple[float, float]] = {}

    def value(k, n):
        if k == 0:
            return 1.0, n * tail_u
        if k > n:
            return 0.0, n * tail_u
        if (k, n) not in memo:
            pol = pick(k, n)
            p, u = float(pol.p[0]), float(pol.U[0])
            s1, t1 = value(k - 1, n - 1)
            s0, t0 = value(k, n - 1)
            memo[(k, n)] = (p * s1 + (1.0 - p) * s0, u + p * t1 + (1.0 - p) * t0)
        return memo[(k, n)]

    s, t = value(K, tf)
    return {"frame_success": s, "throughput": t / tf}
