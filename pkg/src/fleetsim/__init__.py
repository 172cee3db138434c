"""Taxi fleet simulation with dispatch baselines and a mean-field PPO learner."""

from .demand import DemandPattern, generate_random_demand, load_demand, normalized_entropy, save_demand
from .dispatch import (
    VARIANTS, DispatchMatrix, DispatchRouter, build_dispatch, effective_policy, extract_effective_policy,
    variant_router,
)
from .engine import EpochResult, PolicyRouter, TrajectoryBatch, run_epoch
from .graph import RoadNetwork, TravelTimeMatrix, all_pairs_shortest, build_lattice, load_network, save_network
from .policy import PROB_FLOOR, PolicyMatrix, load_policy, project_to_simplex, random_policy, save_policy
from .rl import Trainer, TrainerConfig, imitation_init, train

__all__ = [
    "DemandPattern", "generate_random_demand", "load_demand", "normalized_entropy", "save_demand",
    "VARIANTS", "DispatchMatrix", "DispatchRouter", "build_dispatch", "effective_policy",
    "extract_effective_policy", "variant_router",
    "EpochResult", "PolicyRouter", "TrajectoryBatch", "run_epoch",
    "RoadNetwork", "TravelTimeMatrix", "all_pairs_shortest", "build_lattice", "load_network", "save_network",
    "PROB_FLOOR", "PolicyMatrix", "load_policy", "project_to_simplex", "random_policy", "save_policy",
    "Trainer", "TrainerConfig", "imitation_init", "train",
]
__version__ = "0.1.0"
