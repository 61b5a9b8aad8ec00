"""Frame throughput of offline and online deadline schemes against Pavg (exact frame DP)."""

from dataclasses import dataclass

import numpy as np

from _common import parse_config, write_csv
from optstop import SystemConfig
from optstop.deadline import FrameSpec, PolicyCache, frame_stats, solve_offline
from optstop.errors import InfeasibleError


@dataclass(frozen=True)
class Config:
    num_channels: int = 10
    sensing_fraction: float = 0.05
    theta: float = 0.5
    packets: int = 2
    deadline: int = 4
    min_success: float = 0.95
    pavg: tuple = (0.2, 0.3, 0.5, 0.7, 1.0, 2.0, 10.0)
    after: str = "idle"
    out: str = "results/frame_deadline.csv"


def run(cfg: Config):
    frame = FrameSpec(cfg.packets, cfg.deadline, cfg.min_success)
    rows = []
    for pavg in cfg.pavg:
        sys_ = SystemConfig(num_channels=cfg.num_channels, sensing_fraction=cfg.sensing_fraction,
                            theta=cfg.theta, avg_power_budget=float(pavg))
        cache = PolicyCache(sys_, frame).fill()
        try:
            off = frame_stats(sys_, frame, "offline", offline=solve_offline(sys_, frame),
                              after=cfg.after)
        except InfeasibleError:
            off = {"throughput": np.nan, "frame_success": np.nan}
        on = frame_stats(sys_, frame, "online", cache=cache, after=cfg.after)
        rows.append((pavg, off["throughput"], on["throughput"], on["throughput"] / off["throughput"] - 1,
                     off["frame_success"], on["frame_success"]))
    return write_csv(cfg.out, ("pavg", "throughput_offline", "throughput_online", "online_gain",
                               "success_offline", "success_online"), rows)


if __name__ == "__main__":
    run(parse_config(Config, description=__doc__))
