"""Instrumented energy oracle: energy = -beta * log R, with exact call counters."""

from __future__ import annotations

import threading
from math import log

from ..diffcore import SeededRng


class EnergyOracle:
    """Wraps an environment's reward with call accounting.

    Terminal evaluations return the energy of the *expected* reward (the
    training target) together with a realized reward draw; intermediate
    evaluations score incomplete objects.
    """

    def __init__(self, env, reward_exponent=None, rng: SeededRng | None = None):
        self.env = env
        self.reward_exponent = float(env.reward_exponent if reward_exponent is None else reward_exponent)
        self.rng = rng if rng is not None else SeededRng(0, stream=0x0AC1E)
        self.terminal_calls = 0
        self.intermediate_calls = 0
        self._lock = threading.Lock()

    def _count(self, terminal: bool) -> None:
        with self._lock:
            if terminal:
                self.terminal_calls += 1
            else:
                self.intermediate_calls += 1

    def energy_from_reward(self, reward: float) -> float:
        return -self.reward_exponent * log(reward)

    def evaluate_terminal(self, state):
        """Return ``(energy, realized_reward)`` for a terminal object."""
        self._count(True)
        energy = self.energy_from_reward(self.env.expected_reward(state))
        return energy, float(self.env.sample_reward(state, self.rng))

    def terminal_energy(self, state) -> float:
        self._count(True)
        return self.energy_from_reward(self.env.expected_reward(state))

    def intermediate_energy(self, state) -> float:
        value = self.env.partial_log_reward(state)  # raises before counting if undefined
        self._count(False)
        return -self.reward_exponent * value

    @property
    def counters(self) -> tuple[int, int]:
        return self.terminal_calls, self.intermediate_calls

    def reset(self) -> None:
        with self._lock:
            self.terminal_calls = 0
            self.intermediate_calls = 0


def evaluate_energy(oracle: EnergyOracle, state, terminal: bool) -> float:
    """Energy of ``state`` through the oracle (counts exactly one call)."""
    return oracle.terminal_energy(state) if terminal else oracle.intermediate_energy(state)
