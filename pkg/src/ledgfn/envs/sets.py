"""Fixed-size set generation with additive per-entity utilities."""

from __future__ import annotations

from math import comb, log

import numpy as np

from ..diffcore import SeededRng
from ..exceptions import ConfigError
from .base import Environment

UTILITY_STREAM = 0x5E7


class SetEnv(Environment):
    """Build a set of exactly ``capacity`` distinct entities.

    The reward is the mean utility of the members. An incomplete set is scored
    the same way (mean over its current members, empty set scores log-reward
    0), so the intermediate energy of a full set equals its terminal energy.
    """

    name = "set"
    has_intermediate_energy = True

    def __init__(self, entity_types=30, capacity=20, utility_seed=0, reward_exponent=1.0,
                 mode_threshold=0.25):
        if capacity > entity_types or capacity < 1:
            raise ConfigError(f"capacity {capacity} must lie in [1, entity_types={entity_types}]")
        self.entity_types = int(entity_types)
        self.capacity = int(capacity)
        self.utility_seed = int(utility_seed)
        self.utilities = SeededRng(self.utility_seed, UTILITY_STREAM).uniform(0.01, 1.0, self.entity_types)
        self.reward_exponent = float(reward_exponent)
        self.mode_threshold = float(mode_threshold)
        self.action_count = self.entity_types
        self.max_trajectory_length = self.capacity
        self.encoding_dim = self.entity_types + 1

    def initial_state(self):
        return ()

    def is_terminal(self, state):
        return len(state) == self.capacity

    def step(self, state, action):
        return tuple(sorted(state + (action,)))

    def previous(self, state, action):
        return tuple(m for m in state if m != action)

    def forward_mask(self, state):
        mask = np.zeros(self.action_count, dtype=bool)
        if not self.is_terminal(state):
            mask[:] = True
            mask[list(state)] = False
        return mask

    def backward_mask(self, state):
        mask = np.zeros(self.action_count, dtype=bool)
        mask[list(state)] = True
        return mask

    def rank(self, state):
        return len(state)

    def encode(self, state):
        out = np.zeros(self.encoding_dim)
        out[list(state)] = 1.0
        out[-1] = len(state) / self.capacity
        return out

    def object_id(self, state):
        return "-".join(str(m) for m in state)

    def expected_reward(self, state):
        return float(self.utilities[list(state)].mean())

    def partial_log_reward(self, state):
        if not state:
            return 0.0
        return log(float(self.utilities[list(state)].mean()))

    def terminal_count(self):
        return comb(self.entity_types, self.capacity)


def set_env(entity_types=30, capacity=20, utility_seed=0, **kwargs) -> SetEnv:
    return SetEnv(entity_types, capacity, utility_seed, **kwargs)
