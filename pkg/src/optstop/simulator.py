"""Monte Carlo time-slot simulator for every policy type.

Slots are simulated in fixed-size blocks. Block ``b`` draws from
``substream(seed, b)``, so results depend only on the seed and block size,
not on how blocks are spread over worker processes. Per-slot samples are
reduced to (count, mean, M2) per block and merged in block order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, List, Optional

import numpy as np

from .deadline import FrameSpec, PolicyCache, solve_offline
from .model import SystemConfig, draw_block, substream
from .overlay import OverlayPolicy, waterfill_power

__all__ = [
    "Estimate",
    "RunningStats",
    "SimReport",
    "simulate_overlay",
    "simulate_underlay",
    "simulate_multi_su",
    "simulate_frames",
    "BLOCK_SLOTS",
]

BLOCK_SLOTS = 16384
UNDERLAY_BLOCK_SLOTS = 4096


# --------------------------------------------------------------------------
# Streaming statistics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    """Sample mean with standard error ``std / sqrt(n)``."""

    mean: float
    se: float
    n: int

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.se

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "n": self.n}


class RunningStats:
    """Count, mean and centered second moment, merged blockwise (Chan et al.)."""

    __slots__ = ("n", "mean", "m2")

    def __init__(self, n: int = 0, mean: float = 0.0, m2: float = 0.0):
        self.n, self.mean, self.m2 = n, mean, m2

    @classmethod
    def of(cls, x) -> "RunningStats":
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            return cls()
        mu = float(x.mean())
        return cls(x.size, mu, float(np.sum((x - mu) ** 2)))

    def merge(self, other: "RunningStats") -> "RunningStats":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return self
        n = self.n + other.n
        d = other.mean - self.mean
        self.mean += d * other.n / n
        self.m2 += other.m2 + d * d * self.n * other.n / n
        self.n = n
        return self

    def estimate(self) -> Estimate:
        if self.n < 2:
            return Estimate(self.mean, math.inf, self.n)
        var = self.m2 / (self.n - 1)
        return Estimate(self.mean, math.sqrt(var / self.n), self.n)


@dataclass
class _Block:
    stats: Dict[str, RunningStats]
    n: int
    first: int = -1
    last: int = -1
    inner_hist: Optional[np.ndarray] = None
    extra: Dict[str, np.ndarray] = field(default_factory=dict)


def _delay_parts(success: np.ndarray):
    idx = np.flatnonzero(success)
    if idx.size == 0:
        return -1, -1, np.zeros(0, dtype=np.int64)
    return int(idx[0]), int(idx[-1]), np.bincount(np.diff(idx))


def _merge_blocks(blocks: List[_Block]):
    stats: Dict[str, RunningStats] = {}
    hist = np.zeros(1, dtype=np.int64)
    extra: Dict[str, np.ndarray] = {}
    carry = 0  # blocked slots since the last success (or since slot 0)

    def bump(h, d):
        if d >= h.size:
            h = np.concatenate([h, np.zeros(d + 1 - h.size, dtype=np.int64)])
        h[d] += 1
        return h

    for b in blocks:
        for k, s in b.stats.items():
            stats.setdefault(k, RunningStats()).merge(s)
        for k, v in b.extra.items():
            extra[k] = extra[k] + v if k in extra else v.copy()
        if b.first < 0:
            carry += b.n
            continue
        hist = bump(hist, carry + b.first + 1)
        if b.inner_hist is not None and b.inner_hist.size:
            m = max(hist.size, b.inner_hist.size)
            hist = np.pad(hist, (0, m - hist.size)) + np.pad(b.inner_hist, (0, m - b.inner_hist.size))
        carry = b.n - 1 - b.last
    delay_hist = {int(d): int(c) for d, c in enumerate(hist) if d >= 1 and c > 0}
    return stats, delay_hist, extra


def _run(block_fn: Callable[[int, int], _Block], n_items: int, block: int, workers: int):
    sizes = [min(block, n_items - s) for s in range(0, n_items, block)]
    jobs = list(enumerate(sizes))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(block_fn, *zip(*jobs)))
    return [block_fn(b, n) for b, n in jobs]


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

@dataclass
class SimReport:
    """Empirical per-slot (or per-frame) estimates from one simulation."""

    kind: str
    n_slots: int
    seed: int
    block_size: int
    throughput: Estimate
    success: Estimate
    power: Optional[Estimate] = None
    interference: Optional[Estimate] = None
    delay_histogram: Dict[int, int] = field(default_factory=dict)
    n_frames: int = 0
    frame_success: Optional[Estimate] = None
    extra: dict = field(default_factory=dict)

    @property
    def success_rate(self) -> float:
        return self.success.mean

    @property
    def delay_mean(self) -> Optional[float]:
        total = sum(self.delay_histogram.values())
        if total == 0:
            return None
        return sum(d * c for d, c in self.delay_histogram.items()) / total

    def to_dict(self) -> dict:
        opt = lambda e: None if e is None else e.to_dict()
        return {
            "kind": self.kind,
            "n_slots": self.n_slots,
            "n_frames": self.n_frames,
            "seed": self.seed,
            "block_size": self.block_size,
            "throughput": self.throughput.to_dict(),
            "power": opt(self.power),
            "interference": opt(self.interference),
            "success": self.success.to_dict(),
            "frame_success": opt(self.frame_success),
            "delay_mean": self.delay_mean,
            "delay_histogram": {str(k): v for k, v in sorted(self.delay_histogram.items())},
            "extra": self.extra,
        }


def _report(kind, blocks, n, seed, block, keys=("throughput", "power", "interference"), **kw):
    stats, hist, extra = _merge_blocks(blocks)
    est = {k: stats[k].estimate() if k in stats else None for k in keys + ("success",)}
    return SimReport(kind=kind, n_slots=n, seed=int(seed), block_size=block,
                     throughput=est["throughput"], success=est["success"], power=est["power"],
                     interference=est.get("interference"), delay_histogram=hist,
                     extra={k: v.tolist() for k, v in extra.items()}, **kw)


# --------------------------------------------------------------------------
# Overlay
# --------------------------------------------------------------------------

def _first_true(mask: np.ndarray):
    hit = mask.any(axis=1)
    first = np.argmax(mask, axis=1)
    return hit, first


def _overlay_slot_values(policy: OverlayPolicy, cfg: SystemConfig, busy, gain, usable):
    """Per-slot (rate, power, interference, success) of an overlay policy."""
    eligible = usable & (gain >= policy.thresholds[None, :])
    hit, first = _first_true(eligible)
    rows = np.arange(gain.shape[0])
    g = gain[rows, first]
    c = cfg.c[first]
    if policy.const_power is not None:
        P = np.full_like(g, policy.const_power)
    else:
        P = waterfill_power(np.atleast_1d(g), policy.lambda_p, policy.inst_power_cap)
    P = np.where(hit, P, 0.0)
    rate = c * np.log1p(P * g)
    pw = c * P
    intf = np.where(busy[rows, first], pw, 0.0)
    return rate, pw, intf, hit


def _overlay_block(b: int, n: int, policy, cfg, seed, sensing_errors) -> _Block:
    rng = substream(seed, b)
    d = draw_block(rng, cfg, n)
    busy, gain = d.busy, d.gain[:, :, 0]
    if sensing_errors:
        u = rng.random(busy.shape)
        usable = np.where(busy, u < cfg.missed_detection, u >= cfg.false_alarm)
    else:
        usable = ~busy
    rate, pw, intf, hit = _overlay_slot_values(policy, cfg, busy, gain, usable)
    first, last, inner = _delay_parts(hit)
    return _Block({"throughput": RunningStats.of(rate), "power": RunningStats.of(pw),
                   "interference": RunningStats.of(intf), "success": RunningStats.of(hit)},
                  n, first, last, inner)


def simulate_overlay(policy: OverlayPolicy, cfg: SystemConfig, n_slots: int, seed: int,
                     sensing_errors: bool = False, block: int = BLOCK_SLOTS,
                     workers: int = 1) -> SimReport:
    """Run an overlay (or constant-power) policy for ``n_slots`` slots.

    With ``sensing_errors`` a busy channel looks free with probability
    ``Pmd`` and a free one looks busy with probability ``Pfa``; the SU
    transmits on any channel that looks free and clears the threshold.
    """
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    fn = partial(_overlay_block, policy=policy, cfg=cfg, seed=seed, sensing_errors=sensing_errors)
    rep = _report("overlay", _run(fn, n_slots, block, workers), n_slots, seed, block)
    rep.extra["sensing_errors"] = bool(sensing_errors)
    return rep


# --------------------------------------------------------------------------
# Underlay
# --------------------------------------------------------------------------

def _underlay_block(b: int, n: int, policy, cfg, seed) -> _Block:
    rng = substream(seed, b)
    d = draw_block(rng, cfg, n, with_z=True)
    busy, gain, z = d.busy, d.gain[:, :, 0], d.z
    M = cfg.num_channels
    th = np.empty_like(gain)
    for i in range(1, M + 1):
        th[:, i - 1] = policy.threshold(i, z[:, i - 1], cfg)
    hit, first = _first_true(gain >= th)
    rows = np.arange(n)
    g = gain[rows, first]
    zf = z[rows, first]
    P = np.zeros(n)
    for i in range(1, M + 1):
        sel = hit & (first == i - 1)
        if sel.any():
            P[sel] = policy.power(i, zf[sel], g[sel], cfg)
    c = cfg.c[first]
    rate = c * np.log1p(P * g)
    pw = c * P
    intf = np.where(busy[rows, first] & hit, pw, 0.0)
    first_s, last_s, inner = _delay_parts(hit)
    return _Block({"throughput": RunningStats.of(rate), "power": RunningStats.of(pw),
                   "interference": RunningStats.of(intf), "success": RunningStats.of(hit)},
                  n, first_s, last_s, inner)


def simulate_underlay(policy, cfg: SystemConfig, n_slots: int, seed: int,
                      block: int = UNDERLAY_BLOCK_SLOTS, workers: int = 1) -> SimReport:
    """Run an underlay policy; interference accrues only on busy channels."""
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    fn = partial(_underlay_block, policy=policy, cfg=cfg, seed=seed)
    return _report("underlay", _run(fn, n_slots, block, workers), n_slots, seed, block)


# --------------------------------------------------------------------------
# Multiple SUs
# --------------------------------------------------------------------------

def _multi_block(b: int, n: int, policy, cfg, seed, pool) -> _Block:
    rng = substream(seed, b)
    L = cfg.num_users
    d = draw_block(rng, cfg, n, users=L)
    busy, gain = d.busy, d.gain
    served = np.zeros((n, L), dtype=bool)
    rate = np.zeros(n)
    pw = np.zeros(n)
    rows = np.arange(n)
    for i in range(cfg.num_channels):
        g = gain[:, i, :]
        if pool == "true":
            g = np.where(served, -np.inf, g)
        win = np.argmax(g, axis=1)
        gmax = g[rows, win]
        grant = ~busy[:, i] & (gmax >= policy.thresholds[i])
        new = grant & ~served[rows, win]
        P = np.where(new, waterfill_power(np.where(new, gmax, 1.0), policy.lambda_p,
                                          policy.inst_power_cap), 0.0)
        rate += np.where(new, cfg.c[i] * np.log1p(P * np.where(new, gmax, 0.0)), 0.0)
        pw += cfg.c[i] * P
        served[rows[new], win[new]] = True
    tagged = served[:, 0]
    share = served.sum(axis=1) / L
    first, last, inner = _delay_parts(tagged)
    return _Block({"throughput": RunningStats.of(rate / L), "power": RunningStats.of(pw / L),
                   "success": RunningStats.of(share), "tagged_success": RunningStats.of(tagged)},
                  n, first, last, inner)


def simulate_multi_su(policy, cfg: SystemConfig, n_slots: int, seed: int, pool: str = "true",
                      block: int = 4096, workers: int = 1) -> SimReport:
    """Per-user estimates for the multi-SU downlink.

    ``pool="true"``: a user leaves the competition after its grant.
    ``pool="fixed"``: all ``L`` users compete for every channel and each
    user counts only its first grant, which is the fixed-``L`` recursion.
    The delay histogram follows user 0.
    """
    if pool not in ("true", "fixed"):
        raise ValueError("pool must be 'true' or 'fixed'")
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    fn = partial(_multi_block, policy=policy, cfg=cfg, seed=seed, pool=pool)
    blocks = _run(fn, n_slots, block, workers)
    rep = _report("multi_su", blocks, n_slots, seed, block, keys=("throughput", "power"))
    stats, _, _ = _merge_blocks(blocks)
    rep.extra["pool"] = pool
    rep.extra["tagged_success"] = stats["tagged_success"].estimate().to_dict()
    return rep


# --------------------------------------------------------------------------
# Frames with a deadline
# --------------------------------------------------------------------------

def _frame_block(b: int, n: int, cfg, frame, scheme, table, free, after, seed) -> _Block:
    rng = substream(seed, b)
    K, tf = frame.packets_per_frame, frame.frame_deadline
    M = cfg.num_channels
    d = draw_block(rng, cfg, n * tf)
    busy = d.busy.reshape(n, tf, M)
    gain = d.gain[:, :, 0].reshape(n, tf, M)
    k = np.full(n, K)
    total = np.zeros(n)
    visits = np.zeros((K + 1, tf + 1), dtype=np.int64)
    for s in range(tf):
        left = tf - s
        for kk in range(0, K + 1):
            sel = k == kk
            if not sel.any():
                continue
            live = 1 <= kk <= left
            if live:
                visits[kk, left] += int(sel.sum())
                pol = table[(kk, left)]
            elif after == "free":
                pol = free
            else:
                continue
            rate, _, _, hit = _overlay_slot_values(pol, cfg, busy[sel, s], gain[sel, s], ~busy[sel, s])
            total[sel] += rate
            if live:
                k[sel] -= hit.astype(int)
    ok = k == 0
    return _Block({"throughput": RunningStats.of(total / tf), "success": RunningStats.of(ok)},
                  n, extra={"state_visits": visits})


def simulate_frames(cfg: SystemConfig, frame: FrameSpec, n_frames: int, seed: int,
                    scheme: str = "online", cache: Optional[PolicyCache] = None,
                    offline: Optional[OverlayPolicy] = None, after: str = "idle",
                    block: int = 4096, workers: int = 1) -> SimReport:
    """Simulate deadline frames under the offline or online scheme.

    ``throughput`` is nats per slot averaged over frames; ``frame_success``
    is the fraction of frames that deliver all ``K`` packets in time.
    ``extra["state_visits"][k][n]`` counts slots spent with ``k`` packets
    and ``n`` slots left, for auditing the online policy mix.
    """
    if scheme not in ("online", "offline"):
        raise ValueError("scheme must be 'online' or 'offline'")
    if after not in ("idle", "free"):
        raise ValueError("after must be 'idle' or 'free'")
    K, tf = frame.packets_per_frame, frame.frame_deadline
    if scheme == "offline":
        pol = offline if offline is not None else solve_offline(cfg, frame)
        table = {(k, n): pol for n in range(1, tf + 1) for k in range(1, min(K, n) + 1)}
        free = pol
    else:
        cache = (cache if cache is not None else PolicyCache(cfg, frame)).fill()
        table = {(k, n): cache.get(k, n) for n in range(1, tf + 1) for k in range(1, min(K, n) + 1)}
        free = cache.free()
    fn = partial(_frame_block, cfg=cfg, frame=frame, scheme=scheme, table=table, free=free,
                 after=after, seed=seed)
    blocks = _run(fn, n_frames, block, workers)
    stats, _, extra = _merge_blocks(blocks)
    fs = stats["success"].estimate()
    return SimReport(kind=f"frames_{scheme}", n_slots=n_frames * tf, seed=int(seed),
                     block_size=block, throughput=stats["throughput"].estimate(), success=fs,
                     n_frames=n_frames, frame_success=fs,
                     extra={"after": after, "state_visits": extra["state_visits"].tolist(),
                            "qos_risk": any(bool(p.meta.get("qos_risk")) for p in table.values())})
