"""System configuration, gain laws, detector densities and channel draws."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .errors import DomainError
from .numerics import exp1_scaled

__all__ = [
    "SystemConfig",
    "ChannelDraw",
    "ExponentialGain",
    "MaxGain",
    "gain_law",
    "slot_fraction",
    "gain_ccdf",
    "gain_pdf",
    "gain_ccdf_inv",
    "max_gain_ccdf_L",
    "max_gain_pdf_L",
    "z_pdf_free",
    "z_pdf_busy",
    "z_pdf_marginal",
    "z_logpdf_free",
    "z_logpdf_busy",
    "substream",
    "draw_slot",
    "draw_block",
    "load_config",
    "dump_config",
    "parse_config",
]


@dataclass(frozen=True)
class SystemConfig:
    """Physical and constraint parameters of the sequential-sensing system.

    ``theta`` may be given as a scalar and is expanded to one availability
    per channel. Absent budgets (``None``) mean the constraint is dropped.
    """

    num_channels: int
    sensing_fraction: float
    theta: Sequence[float]
    mean_gain: float = 1.0
    avg_power_budget: Optional[float] = None
    inst_power_cap: Optional[float] = None
    avg_interference_budget: Optional[float] = None
    max_mean_delay: Optional[float] = None
    false_alarm: float = 0.0
    missed_detection: float = 0.0
    detector_samples: int = 10
    noise_var: float = 1.0
    pu_energy: float = 2.0
    num_users: int = 1

    def __post_init__(self):
        M = int(self.num_channels)
        if M < 1 or M != self.num_channels:
            raise ValueError("num_channels must be a positive integer")
        th = self.theta
        if np.ndim(th) == 0:
            th = (float(th),) * M
        th = tuple(float(t) for t in th)
        if len(th) != M:
            raise ValueError(f"theta has {len(th)} entries, expected {M}")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "num_channels", M)
        if not 0.0 < self.sensing_fraction or M * self.sensing_fraction >= 1.0:
            raise ValueError("sensing_fraction must satisfy 0 < tau/Ts and M*tau/Ts < 1")
        for name in ("theta", "false_alarm", "missed_detection"):
            vals = th if name == "theta" else (getattr(self, name),)
            if any(not 0.0 <= v <= 1.0 for v in vals):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.mean_gain <= 0:
            raise ValueError("mean_gain must be positive")
        for name in ("avg_power_budget", "inst_power_cap", "avg_interference_budget"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive when present")
        d = self.max_mean_delay
        if d is not None:
            if math.isinf(d):
                object.__setattr__(self, "max_mean_delay", None)
            elif d < 1.0:
                raise ValueError("max_mean_delay must be >= 1 slot")
        if self.detector_samples < 1 or int(self.detector_samples) != self.detector_samples:
            raise ValueError("detector_samples must be a positive integer")
        if self.noise_var <= 0 or self.pu_energy < 0:
            raise ValueError("noise_var must be positive and pu_energy nonnegative")
        if self.num_users < 1 or int(self.num_users) != self.num_users:
            raise ValueError("num_users must be a positive integer")

    @property
    def c(self) -> np.ndarray:
        """Remaining-slot fractions ``c_i = 1 - i tau/Ts`` for i = 1..M."""
        return 1.0 - np.arange(1, self.num_channels + 1) * self.sensing_fraction

    @property
    def theta_arr(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=float)

    @property
    def delay_target(self) -> Optional[float]:
        """Required per-slot success probability ``1/Dmax`` or None."""
        return None if self.max_mean_delay is None else 1.0 / self.max_mean_delay

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["theta"] = list(self.theta)
        return d


@dataclass(frozen=True)
class ChannelDraw:
    busy: np.ndarray
    gain: np.ndarray
    z: Optional[np.ndarray] = None


def slot_fraction(i: int, cfg: SystemConfig) -> float:
    if not 1 <= i <= cfg.num_channels:
        raise IndexError(f"channel index {i} outside 1..{cfg.num_channels}")
    return 1.0 - i * cfg.sensing_fraction


# --------------------------------------------------------------------------
# Gain laws
# --------------------------------------------------------------------------

def gain_ccdf(x, mean_gain: float):
    return np.exp(-np.asarray(x, dtype=float) / mean_gain)


def gain_pdf(x, mean_gain: float):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, np.exp(-x / mean_gain) / mean_gain, 0.0)


def gain_ccdf_inv(u, mean_gain: float):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u > 1)):
        raise DomainError("gain_ccdf_inv requires u in (0, 1]")
    return -mean_gain * np.log(u)


def max_gain_ccdf_L(x, mean_gain: float, L: int, gumbel: bool = False):
    """CCDF of the largest of ``L`` i.i.d. exponential gains."""
    e = np.exp(-np.asarray(x, dtype=float) / mean_gain)
    if gumbel:
        return -np.expm1(-L * e)
    with np.errstate(divide="ignore"):
        return -np.expm1(L * np.log1p(-np.minimum(e, 1.0)))


def max_gain_pdf_L(x, mean_gain: float, L: int, gumbel: bool = False):
    x = np.asarray(x, dtype=float)
    e = np.exp(-x / mean_gain)
    if gumbel:
        return L / mean_gain * e * np.exp(-L * e)
    with np.errstate(divide="ignore"):
        body = L / mean_gain * e * np.exp((L - 1) * np.log1p(-np.minimum(e, 1.0)))
    return np.where(x >= 0, body, 0.0)


class ExponentialGain:
    """Exponential power gain (Rayleigh fading) with closed-form tail integrals.

    All ``tail_*`` methods integrate against the density from ``a`` to
    infinity and require ``a > 0``.
    """

    def __init__(self, mean_gain: float):
        self.mean = float(mean_gain)

    def ccdf(self, x):
        return gain_ccdf(np.maximum(x, 0.0), self.mean)

    def pdf(self, x):
        return gain_pdf(x, self.mean)

    def tail_inv(self, a):
        """``int_a^inf f(g)/g dg``."""
        return special.exp1(np.asarray(a, dtype=float) / self.mean) / self.mean

    def tail_log_ratio(self, a, lam):
        """``int_a^inf log(g/lam) f(g) dg``, integrated by parts."""
        a = np.asarray(a, dtype=float)
        return np.log(a / lam) * self.ccdf(a) + special.exp1(a / self.mean)

    def tail_log1p(self, a, P):
        """``int_a^inf log(1 + P g) f(g) dg`` for ``a >= 0``."""
        a = np.asarray(a, dtype=float)
        q = 1.0 / (P * self.mean)
        return self.ccdf(a) * (np.log1p(P * a) + exp1_scaled(a / self.mean + q))


class MaxGain:
    """Law of the largest of ``L`` i.i.d. exponential gains.

    Tail integrals use a composite Gauss-Legendre rule: geometric panels
    from ``a`` up to the mean gain, then uniform half-mean panels up to the
    point where the CCDF falls below about 1e-20.
    """

    _nodes, _weights = np.polynomial.legendre.leggauss(12)

    def __init__(self, mean_gain: float, L: int, gumbel: bool = False):
        self.mean = float(mean_gain)
        self.L = int(L)
        self.gumbel = bool(gumbel)
        self._upper = self.mean * (math.log(self.L) + 47.0)

    def ccdf(self, x):
        return max_gain_ccdf_L(np.maximum(x, 0.0), self.mean, self.L, self.gumbel)

    def pdf(self, x):
        return max_gain_pdf_L(x, self.mean, self.L, self.gumbel)

    def _grid(self, a: float):
        if a >= self._upper:
            return None, None
        edges = [a]
        if a < 1e-9 * self.mean:
            edges.append(1e-9 * self.mean)
        while edges[-1] < 0.5 * self.mean and 2.0 * edges[-1] < self._upper:
            edges.append(2.0 * edges[-1])
        n = max(1, int(math.ceil((self._upper - edges[-1]) / (0.5 * self.mean))))
        edges = np.concatenate([edges[:-1], np.linspace(edges[-1], self._upper, n + 1)])
        lo, hi = edges[:-1, None], edges[1:, None]
        half = 0.5 * (hi - lo)
        x = (lo + half * (self._nodes + 1.0)).ravel()
        w = (half * self._weights).ravel()
        return x, w * self.pdf(x)

    def _tail(self, a, h):
        a_arr = np.atleast_1d(np.asarray(a, dtype=float))
        out = np.empty_like(a_arr)
        for k, ak in enumerate(a_arr):
            x, wf = self._grid(float(ak))
            out[k] = 0.0 if x is None else float(np.dot(wf, h(x)))
        return float(out[0]) if np.ndim(a) == 0 else out

    def tail_inv(self, a):
        return self._tail(a, lambda x: 1.0 / x)

    def tail_log_ratio(self, a, lam):
        return self._tail(a, lambda x: np.log(x / lam))

    def tail_log1p(self, a, P):
        return self._tail(a, lambda x: np.log1p(P * x))


def gain_law(cfg: SystemConfig, users: Optional[int] = None, gumbel: bool = False):
    L = cfg.num_users if users is None else users
    if L == 1 and not gumbel:
        return ExponentialGain(cfg.mean_gain)
    return MaxGain(cfg.mean_gain, L, gumbel)


# --------------------------------------------------------------------------
# Energy-detector statistic densities
# --------------------------------------------------------------------------

def z_logpdf_free(z, cfg: SystemConfig):
    """Log-density of the detector output on a free channel (Gamma law)."""
    z = np.asarray(z, dtype=float)
    N, a = cfg.detector_samples, cfg.detector_samples / cfg.noise_var
    zp = np.where(z > 0, z, 1.0)
    out = N * math.log(a) + (N - 1) * np.log(zp) - math.lgamma(N) - a * zp
    edge = math.log(a) if N == 1 else -np.inf
    return np.where(z > 0, out, np.where(z == 0, edge, -np.inf))


def z_logpdf_busy(z, cfg: SystemConfig):
    """Log-density of the detector output on a busy channel (noncentral law).

    Uses the exponentially scaled Bessel function so the density never
    overflows. ``pu_energy == 0`` degenerates to the free density.
    """
    E = cfg.pu_energy
    if E == 0:
        return z_logpdf_free(z, cfg)
    z = np.asarray(z, dtype=float)
    N, a = cfg.detector_samples, cfg.detector_samples / cfg.noise_var
    zp = np.where(z > 0, z, 1.0)
    x = 2.0 * a * np.sqrt(E * zp)
    out = (math.log(a) + 0.5 * (N - 1) * (np.log(zp) - math.log(E))
           - a * (zp + E) + np.log(special.ive(N - 1, x)) + x)
    edge = math.log(a) - a * E if N == 1 else -np.inf
    return np.where(z > 0, out, np.where(z == 0, edge, -np.inf))


def z_pdf_free(z, cfg: SystemConfig):
    return np.exp(z_logpdf_free(z, cfg))


def z_pdf_busy(z, cfg: SystemConfig):
    return np.exp(z_logpdf_busy(z, cfg))


def z_pdf_marginal(i: int, z, cfg: SystemConfig):
    """Availability-weighted mixture of the free and busy densities (i is 1-based)."""
    th = cfg.theta[i - 1]
    return th * z_pdf_free(z, cfg) + (1.0 - th) * z_pdf_busy(z, cfg)


# --------------------------------------------------------------------------
# Random channel draws
# --------------------------------------------------------------------------

def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the substream ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def _draw_z(rng: np.random.Generator, busy: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    # z = sigma^2/(2N) * sum of 2N squared unit Gaussians, mean-shifted when busy
    N = cfg.detector_samples
    shift = math.sqrt(cfg.pu_energy / cfg.noise_var)
    g = rng.standard_normal(busy.shape + (2 * N,))
    g += shift * busy[..., None]
    return cfg.noise_var / (2 * N) * np.einsum("...k,...k->...", g, g)


def draw_block(rng: np.random.Generator, cfg: SystemConfig, n: int,
               users: int = 1, with_z: bool = False) -> ChannelDraw:
    """Draw ``n`` slots of channel states.

    ``busy`` has shape (n, M); ``gain`` has shape (n, M, users); ``z``
    (when requested) has shape (n, M). The order of generator calls is
    fixed so that ``users=1`` reproduces the single-user trace.
    """
    M = cfg.num_channels
    busy = rng.random((n, M)) >= cfg.theta_arr
    gain = rng.exponential(cfg.mean_gain, size=(n, M, users))
    z = _draw_z(rng, busy, cfg) if with_z else None
    return ChannelDraw(busy=busy, gain=gain, z=z)


def draw_slot(cfg: SystemConfig, rng: np.random.Generator, with_z: bool = False) -> ChannelDraw:
    d = draw_block(rng, cfg, 1, cfg.num_users, with_z)
    gain = d.gain[0, :, 0] if cfg.num_users == 1 else d.gain[0]
    return ChannelDraw(busy=d.busy[0], gain=gain, z=None if d.z is None else d.z[0])


# --------------------------------------------------------------------------
# Config files: flat ``key = value`` text
# --------------------------------------------------------------------------

_INT_KEYS = {"num_channels", "detector_samples", "num_users"}
_OPTIONAL_KEYS = {"avg_power_budget", "inst_power_cap", "avg_interference_budget", "max_mean_delay"}
_FIELDS = {f.name for f in dataclasses.fields(SystemConfig)}


def parse_config(text: str) -> SystemConfig:
    """Parse ``key = value`` lines (``#`` comments, comma-separated vectors)."""
    raw: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        raw[key] = val
    kwargs: dict = {}
    for key, val in raw.items():
        if key in _OPTIONAL_KEYS and val.lower() in ("", "none", "absent", "inf", "infinity"):
            kwargs[key] = None
        elif key == "theta":
            parts = [float(p) for p in val.split(",") if p.strip()]
            kwargs[key] = parts[0] if len(parts) == 1 else tuple(parts)
        elif key in _INT_KEYS:
            kwargs[key] = int(val)
        else:
            kwargs[key] = float(val)
    missing = {"num_channels", "sensing_fraction", "theta"} - kwargs.keys()
    if missing:
        raise ValueError(f"missing required key(s): {', '.join(sorted(missing))}")
    return SystemConfig(**kwargs)


def load_config(path) -> SystemConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: SystemConfig) -> str:
    lines = []
    for f in dataclasses.fields(SystemConfig):
        v = getattr(cfg, f.name)
        if v is None:
            s = "none"
        elif f.name == "theta":
            s = ", ".join(repr(t) for t in v)
        else:
            s = repr(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"
