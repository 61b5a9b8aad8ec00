"""Command line entry point: ``optstop {solve,simulate,sweep,deadline}``.

Exit codes: 0 success, 1 usage or validation error, 2 model infeasibility
(or an ill-posed configuration), 3 numerical non-convergence.

Data files carry no timestamps so that a repeated run with the same seed
reproduces them byte for byte. Wall-clock information lives only in the
manifest written next to them. The default simulation seed is read from
the ``OPTSTOP_SEED`` environment variable (``0`` when unset).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .deadline import FrameSpec, PolicyCache, equivalent_max_delay, frame_stats, solve_offline
from .errors import (BracketError, ConvergenceError, IllPosedError, InfeasibleError,
                     OptStopError)
from .model import SystemConfig, dump_config, load_config
from .multisu import MultiSuPolicy, multi_su_metrics, solve_multi_su
from .overlay import (OverlayPolicy, SolverKnobs, max_success_policy, solve_constant_power,
                      solve_overlay, throughput_with_sensing_errors)
from .simulator import simulate_frames, simulate_multi_su, simulate_overlay, simulate_underlay
from .underlay import UnderlayPolicy, solve_constant_power_underlay, solve_underlay

SEED_ENV = "OPTSTOP_SEED"
MODES = ("overlay", "underlay", "multisu", "const-power")
CSV_COLUMNS = ("vary_value", "U", "S_or_I", "p", "expected_delay",
               "lambda_p", "lambda_d", "lambda_i")


class UsageError(Exception):
    """Bad command line or inconsistent inputs (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# Serialization helpers
# --------------------------------------------------------------------------

def _plain(x):
    """Recursively convert numpy scalars and arrays to JSON-native types."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    return x


def _dumps(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def _num(x) -> str:
    return "nan" if x is None else "%.12g" % x


@dataclasses.dataclass
class RunManifest:
    """Provenance record written next to every data file."""

    command: str
    argv: list
    config: dict
    knobs: dict
    seed: Optional[int]
    outputs: dict = dataclasses.field(default_factory=dict)
    residuals: dict = dataclasses.field(default_factory=dict)
    counters: dict = dataclasses.field(default_factory=dict)
    started_at: str = ""
    wall_clock_s: float = 0.0

    def add_output(self, path: Path):
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.outputs[path.name] = {"path": str(path), "sha256": digest}

    def write(self, path: Path) -> Path:
        return _write(path, _dumps(dataclasses.asdict(self)))


def _manifest(args, cfg: SystemConfig, knobs: SolverKnobs, seed=None) -> RunManifest:
    return RunManifest(command=args.command, argv=list(args.argv), config=cfg.to_dict(),
                       knobs=dataclasses.asdict(knobs), seed=seed,
                       started_at=datetime.now(timezone.utc).isoformat(timespec="seconds"))


def _finish(man: RunManifest, t0: float, path: Path, outputs):
    for p in outputs:
        man.add_output(p)
    man.wall_clock_s = round(time.perf_counter() - t0, 3)
    man.write(path)


# --------------------------------------------------------------------------
# Solving
# --------------------------------------------------------------------------

def _knobs(args) -> SolverKnobs:
    return SolverKnobs(lambda_d_grid=args.lambda_d_grid)


def _check_mode_fields(cfg: SystemConfig, mode: str, power: Optional[float]):
    if mode == "underlay" and cfg.avg_interference_budget is None:
        raise UsageError("--mode underlay requires the config key avg_interference_budget")
    if mode in ("overlay", "multisu") and cfg.avg_power_budget is None and cfg.inst_power_cap is None:
        raise UsageError(f"--mode {mode} requires the config key avg_power_budget")
    if mode == "const-power":
        if power is None:
            raise UsageError("--mode const-power requires --power")
        if cfg.avg_power_budget is None and cfg.avg_interference_budget is None:
            raise UsageError("--mode const-power requires avg_power_budget "
                             "(or avg_interference_budget for --underlay)")


def solve_mode(cfg: SystemConfig, mode: str, knobs: SolverKnobs, power: Optional[float] = None,
               underlay: bool = False, baseline: bool = False, multisu_mode: Optional[str] = None,
               gumbel: bool = False):
    """Dispatch one solve; ``underlay`` selects the underlay const-power variant."""
    if mode == "overlay":
        return max_success_policy(cfg, knobs) if baseline else solve_overlay(cfg, knobs)
    if mode == "underlay":
        return solve_underlay(cfg, knobs, baseline=baseline)
    if mode == "multisu":
        return solve_multi_su(cfg, mode=multisu_mode, gumbel=gumbel, knobs=knobs)
    if mode == "const-power":
        if underlay:
            return solve_constant_power_underlay(cfg, power, knobs)
        if baseline:
            return max_success_policy(cfg, knobs, const_power=power)
        return solve_constant_power(cfg, power, knobs)
    raise UsageError(f"unknown mode {mode!r}")


def _policy_text(mode: str, pol, cfg: SystemConfig) -> str:
    m = pol.metrics
    lines = [f"mode = {mode}", f"lambda_p = {pol.lambda_p!r}", f"lambda_d = {pol.lambda_d!r}"]
    if isinstance(pol, UnderlayPolicy):
        lines.append(f"lambda_i = {pol.lambda_i!r}")
        lines.append("multipliers = " + ", ".join(repr(float(u)) for u in pol.multipliers))
    else:
        lines.append("thresholds = " + ", ".join(repr(float(t)) for t in pol.thresholds))
    lines += [f"U_1 = {m.throughput!r}", f"p_1 = {m.success_prob!r}",
              f"E[D] = {m.expected_delay!r}"]
    if m.avg_power is not None:
        lines.append(f"S_1 = {m.avg_power!r}")
    if m.interference is not None:
        lines.append(f"I_1 = {m.interference!r}")
    lines.append("")
    lines.append("# config")
    lines.append(dump_config(cfg).rstrip("\n"))
    return "\n".join(lines) + "\n"


def _residuals(meta: dict) -> dict:
    return {k: v for k, v in meta.items() if k.endswith("_residual")}


def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    _check_mode_fields(cfg, args.mode, args.power)
    knobs = _knobs(args)
    pol = solve_mode(cfg, args.mode, knobs, args.power, args.underlay, args.baseline,
                     args.multisu_mode, args.gumbel)
    out = Path(args.out)
    man = _manifest(args, cfg, knobs)
    man.residuals = _residuals(pol.meta)
    man.counters = {"evaluations": pol.meta.get("evaluations")}
    data = {"manifest": "manifest.json", "mode": args.mode, "config": cfg.to_dict(),
            "policy": pol.to_dict(), "metrics": pol.metrics.to_dict()}
    files = [_write(out / "policy.json", _dumps(data)),
             _write(out / "policy.txt", f"# manifest: manifest.json\n"
                                        + _policy_text(args.mode, pol, cfg))]
    _finish(man, t0, out / "manifest.json", files)
    m = pol.metrics
    print(f"U_1={m.throughput:.6g} p_1={m.success_prob:.6g} E[D]={_num(m.expected_delay)}"
          + ("" if m.avg_power is None else f" S_1={m.avg_power:.6g}")
          + ("" if m.interference is None else f" I_1={m.interference:.6g}"))
    return 0


# --------------------------------------------------------------------------
# Simulation
# --------------------------------------------------------------------------

def load_policy(path) -> tuple:
    """Read a policy file written by ``solve``; returns ``(policy, mode)``."""
    try:
        data = json.loads(Path(path).read_text())
        d = data["policy"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read policy file {path}: {exc}") from None
    kind = d.get("kind")
    if kind == "overlay":
        return OverlayPolicy.from_dict(d), data.get("mode", "overlay")
    if kind == "underlay":
        return UnderlayPolicy.from_dict(d), data.get("mode", "underlay")
    if kind == "multi_su":
        return MultiSuPolicy.from_dict(d), data.get("mode", "multisu")
    raise UsageError(f"unknown policy kind {kind!r}")


def _seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _deltas(rep, analytic: dict) -> dict:
    out = {}
    for key, value in analytic.items():
        est = getattr(rep, key)
        if est is None or value is None:
            continue
        z = (est.mean - value) / est.se if est.se > 0 else (0.0 if est.mean == value else math.inf)
        out[key] = {"analytic": value, "empirical": est.mean, "se": est.se, "delta_se": z}
    return out


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    if args.slots < 1:
        raise UsageError("--slots must be a positive integer")
    cfg = load_config(args.config)
    pol, mode = load_policy(args.policy)
    seed = _seed(args.seed)
    if isinstance(pol, UnderlayPolicy):
        rep = simulate_underlay(pol, cfg, args.slots, seed, workers=args.jobs)
        m = pol.metrics
        analytic = {"throughput": m.throughput, "success": m.success_prob,
                    "power": m.avg_power, "interference": m.interference}
    elif isinstance(pol, MultiSuPolicy):
        if cfg.num_users != pol.num_users:
            raise UsageError("config num_users differs from the policy file")
        rep = simulate_multi_su(pol, cfg, args.slots, seed, pool=args.pool, workers=args.jobs)
        m = multi_su_metrics(pol.thresholds, pol.lambda_p, cfg, pol.gumbel,
                             pool="shrinking" if args.pool == "true" else "fixed")
        analytic = {"throughput": m.throughput, "success": m.success_prob, "power": m.avg_power}
    else:
        rep = simulate_overlay(pol, cfg, args.slots, seed, sensing_errors=args.sensing_errors,
                               workers=args.jobs)
        if args.sensing_errors:
            analytic = {"throughput": throughput_with_sensing_errors(pol, cfg)}
        else:
            m = pol.metrics
            analytic = {"throughput": m.throughput, "success": m.success_prob,
                        "power": m.avg_power}
    deltas = _deltas(rep, analytic)
    worst = max((abs(v["delta_se"]) for v in deltas.values()), default=0.0)
    out = Path(args.out)
    knobs = SolverKnobs()
    man = _manifest(args, cfg, knobs, seed)
    man.counters = {"slots": args.slots, "block_size": rep.block_size}
    man.residuals = {k: v["delta_se"] for k, v in deltas.items()}
    data = {"manifest": "manifest.json", "mode": mode, "policy_file": Path(args.policy).name,
            "policy_sha256": hashlib.sha256(Path(args.policy).read_bytes()).hexdigest(),
            "report": rep.to_dict(), "deltas": deltas, "max_abs_delta_se": worst,
            "within_3se": bool(worst <= 3.0)}
    files = [_write(out / "report.json", _dumps(data))]
    _finish(man, t0, out / "manifest.json", files)
    for k, v in deltas.items():
        print(f"{k}: analytic={v['analytic']:.6g} empirical={v['empirical']:.6g} "
              f"se={v['se']:.3g} delta={v['delta_se']:+.2f} SE")
    return 0


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

_INT_FIELDS = {"num_channels", "detector_samples", "num_users"}
_NUMERIC_FIELDS = {f.name for f in dataclasses.fields(SystemConfig)}


def parse_vary(spec: str):
    """``key=start:stop:steps`` to ``(key, ascending grid)``."""
    try:
        key, rng = spec.split("=", 1)
        start, stop, steps = rng.split(":")
        start, stop, steps = float(start), float(stop), int(steps)
    except ValueError:
        raise UsageError(f"--vary expects key=start:stop:steps, got {spec!r}") from None
    key = key.strip()
    if key not in _NUMERIC_FIELDS:
        raise UsageError(f"--vary: unknown config key {key!r}")
    if steps < 1:
        raise UsageError("--vary: steps must be at least 1")
    grid = np.linspace(start, stop, steps) if steps > 1 else np.array([start])
    if key in _INT_FIELDS:
        grid = np.unique(np.round(grid).astype(int))
    return key, np.sort(grid)


def _vary_config(cfg: SystemConfig, key: str, value) -> SystemConfig:
    d = cfg.to_dict()
    if key == "num_channels":
        if len(set(cfg.theta)) != 1:
            raise UsageError("varying num_channels needs a uniform theta")
        d["theta"] = cfg.theta[0]
    d[key] = int(value) if key in _INT_FIELDS else float(value)
    return SystemConfig(**d)


@dataclasses.dataclass(frozen=True)
class SweepJob:
    mode: str
    power: Optional[float] = None
    underlay: bool = False
    unconstrained: bool = False
    sensing_errors: bool = False
    baseline: bool = False
    multisu_mode: Optional[str] = None
    gumbel: bool = False
    lambda_d_grid: int = 64


def sweep_point(job: SweepJob, cfg: SystemConfig) -> dict:
    """One CSV row; infeasible points get NaN metrics and a status string."""
    if job.unconstrained:
        cfg = cfg.replace(max_mean_delay=None)
    knobs = SolverKnobs(lambda_d_grid=job.lambda_d_grid)
    row = dict.fromkeys(CSV_COLUMNS[1:])
    try:
        pol = solve_mode(cfg, job.mode, knobs, job.power, job.underlay, job.baseline,
                         job.multisu_mode, job.gumbel)
    except (InfeasibleError, IllPosedError) as exc:
        return dict(row, status=f"infeasible: {exc}")
    except (BracketError, ConvergenceError) as exc:
        return dict(row, status=f"nonconvergent: {exc}")
    m = pol.metrics
    U = throughput_with_sensing_errors(pol, cfg) if job.sensing_errors else m.throughput
    under = isinstance(pol, UnderlayPolicy)
    row.update(U=U, S_or_I=m.interference if under else m.avg_power, p=m.success_prob,
               expected_delay=m.expected_delay, lambda_p=pol.lambda_p, lambda_d=pol.lambda_d,
               lambda_i=pol.lambda_i if under else None)
    return dict(row, status="ok")


def _sweep_star(a):
    return sweep_point(*a)


def run_sweep(cfg: SystemConfig, key: str, grid, job: SweepJob, jobs: int = 1):
    """Rows in grid order, whatever the completion order of the workers."""
    work = [(job, _vary_config(cfg, key, v)) for v in grid]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_sweep_star, work))
    else:
        rows = [_sweep_star(w) for w in work]
    for v, r in zip(grid, rows):
        r["vary_value"] = float(v)
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_num(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    key, grid = parse_vary(args.vary)
    if args.sensing_errors and args.mode not in ("overlay", "const-power"):
        raise UsageError("--sensing-errors applies to overlay modes only")
    _check_mode_fields(cfg, args.mode, args.power)
    job = SweepJob(mode=args.mode, power=args.power, underlay=args.underlay,
                   unconstrained=args.unconstrained, sensing_errors=args.sensing_errors,
                   baseline=args.no_stopping_rule, multisu_mode=args.multisu_mode,
                   gumbel=args.gumbel, lambda_d_grid=args.lambda_d_grid)
    rows = run_sweep(cfg, key, grid, job, max(1, args.jobs))
    out = Path(args.out)
    man = _manifest(args, cfg, _knobs(args))
    man.counters = {"points": len(rows), "jobs": args.jobs, "vary": key,
                    "status": {_num(r["vary_value"]): r["status"] for r in rows}}
    files = [_write(out, rows_to_csv(rows))]
    _finish(man, t0, manifest_path_for(out), files)
    bad = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} points written to {out}" + (f" ({bad} without a solution)" if bad else ""))
    return 0


def manifest_path_for(csv_path: Path) -> Path:
    """The manifest of ``name.csv`` is ``name.manifest.json`` beside it."""
    return csv_path.with_name(csv_path.stem + ".manifest.json")


# --------------------------------------------------------------------------
# Frame deadlines
# --------------------------------------------------------------------------

def cmd_deadline(args) -> int:
    t0 = time.perf_counter()
    if args.tf <= args.K:
        raise UsageError("--tf must exceed --K")
    if args.frames < 1:
        raise UsageError("--frames must be a positive integer")
    cfg = load_config(args.config).replace(max_mean_delay=None)
    if cfg.avg_power_budget is None and cfg.inst_power_cap is None:
        raise UsageError("deadline requires the config key avg_power_budget")
    frame = FrameSpec(args.K, args.tf, args.rmin)
    seed = _seed(args.seed)
    knobs = _knobs(args)
    offline = solve_offline(cfg, frame, knobs)
    cache = PolicyCache(cfg, frame, knobs).fill()
    result = {}
    for scheme in ("offline", "online"):
        an = frame_stats(cfg, frame, scheme, cache=cache, offline=offline, after=args.after)
        rep = simulate_frames(cfg, frame, args.frames, seed, scheme=scheme, cache=cache,
                              offline=offline, after=args.after, workers=args.jobs)
        result[scheme] = {
            "throughput": {"analytic": an["throughput"], **rep.throughput.to_dict()},
            "frame_success": {"analytic": an["frame_success"], **rep.frame_success.to_dict()},
            "qos_risk_frames": rep.extra.get("qos_risk", 0),
        }
    dmax = equivalent_max_delay(args.K, args.tf, args.rmin)
    out = Path(args.out)
    man = _manifest(args, cfg, knobs, seed)
    man.counters = {"frames": args.frames, "cached_policies": len(cache)}
    man.residuals = {s: result[s]["frame_success"]["analytic"] - args.rmin for s in result}
    data = {"manifest": "manifest.json", "K": args.K, "t_f": args.tf, "r_min": args.rmin,
            "after": args.after, "equivalent_max_delay": dmax, "schemes": result}
    lines = ["scheme,throughput,throughput_se,throughput_analytic,"
             "frame_success,frame_success_se,frame_success_analytic"]
    for s, r in result.items():
        t, f = r["throughput"], r["frame_success"]
        lines.append(",".join([s] + [_num(x) for x in (t["mean"], t["se"], t["analytic"],
                                                       f["mean"], f["se"], f["analytic"])]))
    files = [_write(out / "deadline.json", _dumps(data)),
             _write(out / "deadline.csv", "\n".join(lines) + "\n")]
    _finish(man, t0, out / "manifest.json", files)
    for s, r in result.items():
        print(f"{s}: throughput={r['throughput']['mean']:.6g} "
              f"frame_success={r['frame_success']['mean']:.4f}")
    return 0


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

def _solver_flags(p):
    p.add_argument("--power", type=float, help="transmit power for --mode const-power")
    p.add_argument("--underlay", action="store_true",
                   help="const-power: use the underlay (soft-sensing) model")
    p.add_argument("--multisu-mode", choices=("exact", "asymptotic"),
                   help="multi-SU solve mode (default chosen from L/M)")
    p.add_argument("--gumbel", action="store_true", help="Gumbel law for the max gain")
    p.add_argument("--lambda-d-grid", type=int, default=SolverKnobs.lambda_d_grid,
                   help="grid points for the delay-dual scan")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="optstop", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve for the optimal policy")
    p.add_argument("config")
    p.add_argument("--mode", choices=MODES, default="overlay")
    p.add_argument("--baseline", action="store_true",
                   help="solve the policy without a stopping rule instead")
    p.add_argument("--out", required=True, help="output directory")
    _solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo check of a solved policy")
    p.add_argument("config")
    p.add_argument("--policy", required=True, help="policy.json written by solve")
    p.add_argument("--slots", type=int, required=True)
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    p.add_argument("--sensing-errors", action="store_true")
    p.add_argument("--pool", choices=("true", "fixed"), default="true",
                   help="multi-SU: real shrinking pool or fixed-L competitors")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="solve over a grid of one config value")
    p.add_argument("config")
    p.add_argument("--vary", required=True, help="key=start:stop:steps")
    p.add_argument("--mode", choices=MODES, default="overlay")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--constrained", dest="unconstrained", action="store_false")
    g.add_argument("--unconstrained", dest="unconstrained", action="store_true",
                   help="drop the delay constraint")
    p.set_defaults(unconstrained=False)
    p.add_argument("--sensing-errors", action="store_true",
                   help="report throughput under imperfect sensing")
    p.add_argument("--no-stopping-rule", action="store_true",
                   help="baseline that transmits on the first admissible channel")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output CSV path")
    _solver_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("deadline", help="offline vs online frame-deadline schemes")
    p.add_argument("config")
    p.add_argument("--K", type=int, required=True, help="packets per frame")
    p.add_argument("--tf", type=int, required=True, help="frame deadline in slots")
    p.add_argument("--rmin", type=float, required=True, help="minimum frame success rate")
    p.add_argument("--frames", type=int, default=100000)
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    p.add_argument("--after", choices=("idle", "free"), default="idle",
                   help="behaviour once the frame outcome is decided")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--lambda-d-grid", type=int, default=SolverKnobs.lambda_d_grid)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_deadline)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InfeasibleError, IllPosedError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except (BracketError, ConvergenceError) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OptStopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
