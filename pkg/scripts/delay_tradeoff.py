"""Throughput and mean access delay against Pavg, with and without the delay constraint.

The constrained run also records lambda_D* and the p_1 residual. Points
where the delay target cannot be met are written with NaN metrics.
"""

from dataclasses import dataclass

import numpy as np

from _common import parse_config, write_csv
from optstop import SystemConfig
from optstop.errors import InfeasibleError
from optstop.overlay import solve_overlay


@dataclass(frozen=True)
class Config:
    num_channels: int = 10
    sensing_fraction: float = 0.05
    theta: float = 0.5
    mean_gain: float = 1.0
    max_mean_delay: float = 1.1
    pavg_min: float = 0.1
    pavg_max: float = 100.0
    points: int = 13
    out: str = "results/delay_tradeoff.csv"


def run(cfg: Config):
    rows = []
    for pavg in np.geomspace(cfg.pavg_min, cfg.pavg_max, cfg.points):
        sys_ = SystemConfig(num_channels=cfg.num_channels, sensing_fraction=cfg.sensing_fraction,
                            theta=cfg.theta, mean_gain=cfg.mean_gain, avg_power_budget=float(pavg))
        free = solve_overlay(sys_)
        try:
            con = solve_overlay(sys_.replace(max_mean_delay=cfg.max_mean_delay))
            c = (con.U[0], 1 / con.p[0], con.lambda_d)
        except InfeasibleError:
            c = (np.nan, np.nan, np.nan)
        loss = 1 - c[0] / free.U[0]
        rows.append((pavg, free.U[0], c[0], 100 * loss, 1 / free.p[0], c[1], c[2]))
    return write_csv(cfg.out, ("pavg", "U_unconstrained", "U_constrained", "loss_pct",
                               "delay_unconstrained", "delay_constrained", "lambda_d"), rows)


if __name__ == "__main__":
    run(parse_config(Config, description=__doc__))
