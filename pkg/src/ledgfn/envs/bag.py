"""Bag (multiset) generation with a stochastic reward for repeated entities."""

from __future__ import annotations

from math import comb, log

import numpy as np

from ..exceptions import ConfigError
from .base import Environment

SPECIAL_LOW, SPECIAL_HIGH, SPECIAL_LOW_PROB = 10.0, 30.0, 0.75
SPECIAL_MEAN = SPECIAL_LOW_PROB * SPECIAL_LOW + (1 - SPECIAL_LOW_PROB) * SPECIAL_HIGH


class BagEnv(Environment):
    """Add entities to a bag; STOP is allowed at any non-empty bag.

    A state is ``(counts, stopped)``. Bags holding ``special_repeat`` or more
    copies of one entity pay 10 with probability 0.75 and 30 otherwise; every
    other bag pays ``base_reward``. Intermediate energy is zero unless the
    partial bag is already special.
    """

    name = "bag"
    has_intermediate_energy = True

    def __init__(self, entity_types=7, capacity=15, special_repeat=7, base_reward=0.1,
                 reward_exponent=1.0, mode_threshold=30.0):
        if entity_types < 2:
            raise ConfigError(f"bag needs at least 2 entity types, got {entity_types}")
        if capacity < special_repeat:
            raise ConfigError(f"capacity {capacity} is below special_repeat {special_repeat}")
        if special_repeat < 1 or base_reward <= 0:
            raise ConfigError("special_repeat must be >= 1 and base_reward positive")
        self.entity_types = int(entity_types)
        self.capacity = int(capacity)
        self.special_repeat = int(special_repeat)
        self.base_reward = float(base_reward)
        self.reward_exponent = float(reward_exponent)
        self.mode_threshold = float(mode_threshold)
        self.stop_action = self.entity_types
        self.action_count = self.entity_types + 1
        self.max_trajectory_length = self.capacity + 1
        self.encoding_dim = self.entity_types + 1

    def initial_state(self):
        return ((0,) * self.entity_types, False)

    def is_terminal(self, state):
        counts, stopped = state
        return stopped or sum(counts) == self.capacity

    def step(self, state, action):
        counts, _ = state
        if action == self.stop_action:
            return (counts, True)
        c = list(counts)
        c[action] += 1
        return (tuple(c), False)

    def previous(self, state, action):
        counts, _ = state
        if action == self.stop_action:
            return (counts, False)
        c = list(counts)
        c[action] -= 1
        return (tuple(c), False)

    def forward_mask(self, state):
        mask = np.zeros(self.action_count, dtype=bool)
        if not self.is_terminal(state):
            mask[: self.entity_types] = True
            mask[self.stop_action] = sum(state[0]) > 0
        return mask

    def backward_mask(self, state):
        counts, stopped = state
        mask = np.zeros(self.action_count, dtype=bool)
        if stopped:
            mask[self.stop_action] = True
        else:
            mask[: self.entity_types] = np.asarray(counts) > 0
        return mask

    def rank(self, state):
        return sum(state[0]) + int(state[1])

    def encode(self, state):
        counts, _ = state
        out = np.empty(self.encoding_dim)
        out[:-1] = np.asarray(counts, dtype=np.float64) / self.capacity
        out[-1] = sum(counts) / self.capacity
        return out

    def encode_batch(self, states):
        counts = np.asarray([s[0] for s in states], dtype=np.float64).reshape(len(states), -1)
        return np.hstack([counts, counts.sum(axis=1, keepdims=True)]) / self.capacity

    def key(self, state):
        return state[0]

    def object_id(self, state):
        return "-".join(str(c) for c in state[0])

    def is_special(self, state) -> bool:
        return max(state[0]) >= self.special_repeat

    def expected_reward(self, state):
        return SPECIAL_MEAN if self.is_special(state) else self.base_reward

    def sample_reward(self, state, rng):
        if not self.is_special(state):
            return self.base_reward
        return SPECIAL_LOW if rng.random() < SPECIAL_LOW_PROB else SPECIAL_HIGH

    def partial_log_reward(self, state):
        return log(SPECIAL_MEAN) if self.is_special(state) else 0.0

    def terminal_count(self):
        return comb(self.capacity + self.entity_types, self.entity_types) - 1

    def state_to_json(self, state):
        return [list(state[0]), bool(state[1])]

    def state_from_json(self, data):
        return (tuple(int(c) for c in data[0]), bool(data[1]))


def bag_env(entity_types=7, capacity=15, special_repeat=7, **kwargs) -> BagEnv:
    return BagEnv(entity_types, capacity, special_repeat, **kwargs)
