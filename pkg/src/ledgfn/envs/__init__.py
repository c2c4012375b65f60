from .bag import BagEnv, bag_env
from .base import Environment, Trajectory, validate_trajectory
from .enumerate import TerminalDistribution, enumerate_terminals, states_by_rank
from .explicit import DagEnv, chain_env, two_leaf_tree
from .oracle import EnergyOracle, evaluate_energy
from .sequence import SequenceEnv, sequence_env
from .sets import SetEnv, set_env

__all__ = [
    "BagEnv",
    "DagEnv",
    "EnergyOracle",
    "Environment",
    "SequenceEnv",
    "SetEnv",
    "TerminalDistribution",
    "Trajectory",
    "bag_env",
    "chain_env",
    "enumerate_terminals",
    "evaluate_energy",
    "sequence_env",
    "set_env",
    "states_by_rank",
    "two_leaf_tree",
    "validate_trajectory",
]
