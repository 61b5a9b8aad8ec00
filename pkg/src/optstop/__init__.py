"""Optimal stopping rules for sequential channel sensing with power control.

The public API re-exports the solvers for the overlay, underlay, multi-user
and frame-deadline problems together with the Monte Carlo simulator.
"""

from .deadline import (FrameSpec, OnlineState, PolicyCache, equivalent_max_delay, frame_stats,
                       frame_success_prob, online_step, required_success_prob, solve_offline)
from .errors import (BracketError, ConvergenceError, DomainError, IllPosedError,
                     InfeasibleError, OptStopError)
from .model import SystemConfig, dump_config, load_config, parse_config
from .multisu import MultiSuPolicy, multi_su_metrics, solve_multi_su
from .numerics import Tolerance, adaptive_quad, bisect, lambert_w0, lambert_w0_negexp
from .overlay import (Metrics, OverlayPolicy, SolverKnobs, evaluate_policy, lambda_d_upper_bound,
                      max_success_policy, solve_constant_power, solve_overlay,
                      threshold_backsolve, throughput_with_sensing_errors, waterfill_power)
from .simulator import (Estimate, SimReport, simulate_frames, simulate_multi_su,
                        simulate_overlay, simulate_underlay)
from .underlay import (UnderlayPolicy, posterior_busy, solve_constant_power_underlay,
                       solve_underlay, underlay_metrics)

__version__ = "0.1.0"
