"""Discrete-event simulation and learning for RL-synthesized wireless MAC protocols."""

from .aloha import aloha_theoretical_throughput, simulate_aloha
from .config import ConfigError, ScenarioConfig, config_from_dict, parse_config
from .engine import ChannelParams, resolve_receptions
from .harness import compare_baseline, export_metrics, run_scenario, run_sweep
from .learning import LearningParams
from .rra import simulate_rra
from .tdma import make_frame_config, simulate_defrag, simulate_mab
from .topology import Topology, TrafficSpec, build_topology

__version__ = "0.1.0"

__all__ = [
    "ChannelParams", "ConfigError", "LearningParams", "ScenarioConfig", "Topology", "TrafficSpec",
    "aloha_theoretical_throughput", "build_topology", "compare_baseline", "config_from_dict",
    "export_metrics", "make_frame_config", "parse_config", "resolve_receptions", "run_scenario",
    "run_sweep", "simulate_aloha", "simulate_defrag", "simulate_mab", "simulate_rra",
]
