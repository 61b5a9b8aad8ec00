"""Throughput of the perfect-sensing policy when sensing errs, against the idle probability."""

from dataclasses import dataclass

import numpy as np

from _common import parse_config, write_csv
from optstop import SystemConfig
from optstop.overlay import solve_overlay, throughput_with_sensing_errors
from optstop.simulator import simulate_overlay


@dataclass(frozen=True)
class Config:
    num_channels: int = 10
    sensing_fraction: float = 0.05
    avg_power_budget: float = 10.0
    false_alarm: float = 0.1
    missed_detection: float = 0.1
    theta_min: float = 0.1
    theta_max: float = 0.9
    points: int = 9
    sim_slots: int = 0
    seed: int = 0
    out: str = "results/sensing_errors.csv"


def run(cfg: Config):
    rows = []
    for k, th in enumerate(np.linspace(cfg.theta_min, cfg.theta_max, cfg.points)):
        sys_ = SystemConfig(num_channels=cfg.num_channels, sensing_fraction=cfg.sensing_fraction,
                            theta=float(th), avg_power_budget=cfg.avg_power_budget)
        pol = solve_overlay(sys_)
        noisy = sys_.replace(false_alarm=cfg.false_alarm, missed_detection=cfg.missed_detection)
        u_err = throughput_with_sensing_errors(pol, noisy)
        sim_u = np.nan
        if cfg.sim_slots > 0:
            sim_u = simulate_overlay(pol, noisy, cfg.sim_slots, seed=cfg.seed + k,
                                     sensing_errors=True).throughput.mean
        rows.append((th, pol.U[0], u_err, u_err / pol.U[0] - 1, sim_u))
    return write_csv(cfg.out, ("theta", "U_perfect", "U_errors", "rel_change", "U_errors_sim"), rows)


if __name__ == "__main__":
    run(parse_config(Config, description=__doc__))
