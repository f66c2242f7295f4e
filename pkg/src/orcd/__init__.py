"""Opportunistic routing with congestion diversity: simulator and analysis toolkit."""
from .config import ScenarioConfig, from_dict, load_config
from .congestion import (
    etx_table,
    partial_diversity_value,
    relay_distribution,
    solve_fixed_point,
    success_prob,
    update_congestion,
)
from .network import Topology, neighbors, sample_forwarder_set, subset_probability, validate_topology
from .sim import MetricsLog, World, run_scenario

__all__ = [
    "ScenarioConfig",
    "from_dict",
    "load_config",
    "etx_table",
    "partial_diversity_value",
    "relay_distribution",
    "solve_fixed_point",
    "success_prob",
    "update_congestion",
    "Topology",
    "neighbors",
    "sample_forwarder_set",
    "subset_probability",
    "validate_topology",
    "MetricsLog",
    "World",
    "run_scenario",
]
