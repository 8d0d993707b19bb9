"""Leader-follower synchronization of high-order swarms under switching topologies.

Adaptive NN control with formation offsets, repulsive potentials for
collision and obstacle avoidance, switched-system Lyapunov analysis and a
fixed-step RK4 simulator with a config-driven CLI.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .config import config_from_dict, config_to_dict, dump_config, parse_config
from .sim import SimConfig, SimTrace, metrics, simulate

__all__ = [
    "SimConfig",
    "SimTrace",
    "__version__",
    "config_from_dict",
    "config_to_dict",
    "dump_config",
    "metrics",
    "parse_config",
    "simulate",
]
