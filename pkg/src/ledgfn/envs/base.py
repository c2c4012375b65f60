"""Environment protocol and the trajectory record shared by every task."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Hashable

import numpy as np

from ..exceptions import ConfigError, ContractError, EnvironmentContractError


class Environment(ABC):
    """A DAG-structured generation task rooted at a unique empty state.

    States are hashable values. Actions are integers in ``[0, action_count)``;
    the forward mask of a state lists the actions that lead to a child, the
    backward mask lists the actions through which the state can be reached.
    """

    name: str = "env"
    action_count: int
    max_trajectory_length: int
    encoding_dim: int
    mode_threshold: float = float("inf")
    reward_exponent: float = 1.0
    has_intermediate_energy: bool = False

    # --- graph ------------------------------------------------------------
    @abstractmethod
    def initial_state(self) -> Hashable: ...

    @abstractmethod
    def is_terminal(self, state) -> bool: ...

    @abstractmethod
    def step(self, state, action: int): ...

    @abstractmethod
    def previous(self, state, action: int):
        """Parent reached by undoing ``action`` (assumes the backward mask allows it)."""

    @abstractmethod
    def forward_mask(self, state) -> np.ndarray: ...

    @abstractmethod
    def backward_mask(self, state) -> np.ndarray: ...

    @abstractmethod
    def rank(self, state) -> int:
        """Monotone rank: strictly increases along every transition."""

    def is_initial(self, state) -> bool:
        return state == self.initial_state()

    def children(self, state):
        if self.is_terminal(state):
            raise ContractError(f"terminal state {state!r} has no children")
        return [(int(a), self.step(state, int(a))) for a in np.flatnonzero(self.forward_mask(state))]

    def parents(self, state):
        if self.is_initial(state):
            raise ContractError("the initial state has no parents")
        return [(int(a), self.previous(state, int(a))) for a in np.flatnonzero(self.backward_mask(state))]

    # --- features ---------------------------------------------------------
    @abstractmethod
    def encode(self, state) -> np.ndarray: ...

    def encode_batch(self, states) -> np.ndarray:
        if not states:
            return np.zeros((0, self.encoding_dim))
        return np.stack([self.encode(s) for s in states])

    def key(self, state) -> Hashable:
        """Canonical object key used by mode/top-k tracking."""
        return state

    def object_id(self, state) -> str:
        return str(self.key(state))

    # --- rewards ----------------------------------------------------------
    @abstractmethod
    def expected_reward(self, state) -> float:
        """Mean reward of a terminal object (defines the training target)."""

    def sample_reward(self, state, rng) -> float:
        """Realized reward draw; deterministic environments return the mean."""
        return self.expected_reward(state)

    def partial_log_reward(self, state) -> float:
        """Log-reward of an incomplete object, for environments that define one."""
        raise ConfigError(f"environment {self.name!r} defines no intermediate energy")

    @abstractmethod
    def terminal_count(self) -> int:
        """Exact (or upper-bound) size of the terminal space."""

    # --- serialization ----------------------------------------------------
    def state_to_json(self, state) -> Any:
        return list(state) if isinstance(state, tuple) else state

    def state_from_json(self, data):
        return tuple(data) if isinstance(data, list) else data


@dataclass
class Trajectory:
    """A complete trajectory ``s_0 -> ... -> s_T`` with its terminal energy.

    ``enc``, ``fmask`` and ``bmask`` cache the state encodings and action masks
    (one row per state); :meth:`prepare` fills them.
    """

    states: list
    actions: list
    terminal_energy: float
    terminal_reward: float
    enc: np.ndarray | None = field(default=None, repr=False, compare=False)
    fmask: np.ndarray | None = field(default=None, repr=False, compare=False)
    bmask: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def length(self) -> int:
        return len(self.actions)

    @property
    def terminal(self):
        return self.states[-1]

    def prepare(self, env: Environment) -> "Trajectory":
        if self.enc is None:
            self.enc = env.encode_batch(self.states)
            self.fmask = np.stack([env.forward_mask(s) for s in self.states])
            self.bmask = np.stack([env.backward_mask(s) for s in self.states])
        return self

    def to_json(self, env: Environment) -> dict:
        return {
            "states": [env.state_to_json(s) for s in self.states],
            "actions": [int(a) for a in self.actions],
            "terminal_energy": float(self.terminal_energy),
            "terminal_reward": float(self.terminal_reward),
        }

    @classmethod
    def from_json(cls, data: dict, env: Environment) -> "Trajectory":
        return cls(
            states=[env.state_from_json(s) for s in data["states"]],
            actions=[int(a) for a in data["actions"]],
            terminal_energy=float(data["terminal_energy"]),
            terminal_reward=float(data["terminal_reward"]),
        ).prepare(env)


def validate_trajectory(env: Environment, traj: Trajectory) -> None:
    """Raise :class:`EnvironmentContractError` if ``traj`` breaks an invariant."""
    if len(traj.states) != len(traj.actions) + 1:
        raise EnvironmentContractError("states must outnumber actions by exactly one")
    if not env.is_initial(traj.states[0]):
        raise EnvironmentContractError("trajectory does not start at the initial state")
    if not env.is_terminal(traj.states[-1]):
        raise EnvironmentContractError("trajectory does not end in a terminal state")
    for s, a, nxt in zip(traj.states[:-1], traj.actions, traj.states[1:]):
        if env.is_terminal(s):
            raise EnvironmentContractError(f"trajectory continues past terminal state {s!r}")
        if not env.forward_mask(s)[a] or env.step(s, a) != nxt:
            raise EnvironmentContractError(f"invalid transition {s!r} --{a}--> {nxt!r}")
