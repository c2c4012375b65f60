"""Exhaustive traversal of small state graphs and exact Boltzmann targets."""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..exceptions import EnumerationTooLarge

DEFAULT_LIMIT = 10**6


def _guard(env, limit):
    estimate = env.terminal_count()
    if estimate > limit:
        raise EnumerationTooLarge(estimate, limit)


def states_by_rank(env, limit=DEFAULT_LIMIT) -> list[list]:
    """All reachable states grouped by rank (a topological layering)."""
    _guard(env, limit)
    root = env.initial_state()
    seen = {root}
    queue = deque([root])
    layers: dict[int, list] = {}
    while queue:
        s = queue.popleft()
        layers.setdefault(env.rank(s), []).append(s)
        if env.is_terminal(s):
            continue
        for _, nxt in env.children(s):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return [layers[r] for r in sorted(layers)]


@dataclass
class TerminalDistribution:
    """Terminal objects with their expected rewards and target probabilities."""

    states: list
    keys: list
    object_ids: list
    rewards: np.ndarray
    probs: np.ndarray

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(zip(self.states, self.probs))

    def as_dict(self) -> dict:
        return dict(zip(self.keys, self.probs))

    def index(self) -> dict:
        return {k: i for i, k in enumerate(self.keys)}

    def write_csv(self, stream=None) -> str:
        buf = stream if stream is not None else io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["object_id", "reward", "probability"])
        for oid, r, p in zip(self.object_ids, self.rewards, self.probs):
            writer.writerow([oid, repr(float(r)), repr(float(p))])
        return buf.getvalue() if stream is None else ""


def boltzmann_probs(rewards, reward_exponent) -> np.ndarray:
    logw = reward_exponent * np.log(np.asarray(rewards, dtype=np.float64))
    w = np.exp(logw - logw.max())
    return w / math.fsum(w)


def enumerate_terminals(env, reward_exponent=None, limit=DEFAULT_LIMIT) -> TerminalDistribution:
    """Every terminal object with ``p*(x) = R(x)^beta / Z`` (expected rewards)."""
    beta = env.reward_exponent if reward_exponent is None else reward_exponent
    terminals = [s for layer in states_by_rank(env, limit) for s in layer if env.is_terminal(s)]
    rewards = np.array([env.expected_reward(s) for s in terminals])
    return TerminalDistribution(
        states=terminals,
        keys=[env.key(s) for s in terminals],
        object_ids=[env.object_id(s) for s in terminals],
        rewards=rewards,
        probs=boltzmann_probs(rewards, beta),
    )
