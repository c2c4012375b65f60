"""Hand-written DAG environments for small exact checks."""

from __future__ import annotations

from math import log

import numpy as np

from ..exceptions import ConfigError
from .base import Environment


class DagEnv(Environment):
    """Environment given by an explicit adjacency list.

    ``children[node]`` is the ordered child list of ``node``; the action that
    reaches ``children[node][i]`` is ``i``. Leaves are terminal and need a
    reward. Incoming edges of a node must use distinct action indices so that
    a backward policy over actions can tell parents apart.
    """

    name = "dag"

    def __init__(self, children, rewards, root=None, partial_log_rewards=None,
                 reward_exponent=1.0, mode_threshold=float("inf")):
        self._children = {n: list(c) for n, c in children.items()}
        for kids in list(self._children.values()):
            for k in kids:
                self._children.setdefault(k, [])
        self.nodes = list(self._children)
        self.root = self.nodes[0] if root is None else root
        self._index = {n: i for i, n in enumerate(self.nodes)}
        self.rewards = {n: float(r) for n, r in rewards.items()}
        self.terminals = [n for n in self.nodes if not self._children[n]]
        missing = [n for n in self.terminals if n not in self.rewards]
        if missing:
            raise ConfigError(f"terminal nodes without reward: {missing}")
        if any(r <= 0 for r in self.rewards.values()):
            raise ConfigError("rewards must be positive")
        self._partial = dict(partial_log_rewards) if partial_log_rewards is not None else None
        self.has_intermediate_energy = self._partial is not None
        self.reward_exponent = float(reward_exponent)
        self.mode_threshold = float(mode_threshold)
        self.action_count = max(len(c) for c in self._children.values())

        self._parents = {n: [] for n in self.nodes}
        for parent, kids in self._children.items():
            for a, kid in enumerate(kids):
                if any(pa == a for pa, _ in self._parents[kid]):
                    raise ConfigError(f"node {kid!r} has two incoming edges with action {a}")
                self._parents[kid].append((a, parent))

        self._rank = {}
        for n in self._topological_order():
            preds = self._parents[n]
            self._rank[n] = 0 if not preds else 1 + max(self._rank[p] for _, p in preds)
        self.max_trajectory_length = max(self._rank.values())
        self.encoding_dim = len(self.nodes)

    def _topological_order(self):
        indegree = {n: len(self._parents[n]) for n in self.nodes}
        order, frontier = [], [n for n in self.nodes if indegree[n] == 0]
        while frontier:
            n = frontier.pop()
            order.append(n)
            for kid in self._children[n]:
                indegree[kid] -= 1
                if indegree[kid] == 0:
                    frontier.append(kid)
        if len(order) != len(self.nodes):
            raise ConfigError("graph contains a cycle")
        return order

    def initial_state(self):
        return self.root

    def is_terminal(self, state):
        return not self._children[state]

    def step(self, state, action):
        return self._children[state][action]

    def previous(self, state, action):
        for a, p in self._parents[state]:
            if a == action:
                return p
        raise KeyError(action)

    def forward_mask(self, state):
        mask = np.zeros(self.action_count, dtype=bool)
        mask[: len(self._children[state])] = True
        return mask

    def backward_mask(self, state):
        mask = np.zeros(self.action_count, dtype=bool)
        for a, _ in self._parents[state]:
            mask[a] = True
        return mask

    def rank(self, state):
        return self._rank[state]

    def encode(self, state):
        out = np.zeros(self.encoding_dim)
        out[self._index[state]] = 1.0
        return out

    def expected_reward(self, state):
        return self.rewards[state]

    def partial_log_reward(self, state):
        if self._partial is None:
            return super().partial_log_reward(state)
        if self.is_terminal(state):
            return self._partial.get(state, log(self.rewards[state]))
        return float(self._partial.get(state, 0.0))

    def terminal_count(self):
        return len(self.terminals)


def two_leaf_tree(rewards=(np.e, 1.0)) -> DagEnv:
    return DagEnv({"s0": ["a", "b"]}, {"a": rewards[0], "b": rewards[1]})


def chain_env(length=3, reward=2.0) -> DagEnv:
    nodes = [f"s{i}" for i in range(length + 1)]
    return DagEnv({a: [b] for a, b in zip(nodes[:-1], nodes[1:])}, {nodes[-1]: reward})
