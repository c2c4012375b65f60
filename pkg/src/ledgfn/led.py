"""Learned energy decomposition: transition potentials as local credit.

A potential network scores each transition ``(s_t, a_t)``. It is fit so the
potentials along a trajectory add up to the terminal energy, with random
dropout of transitions pushing the credit to spread evenly. The assigned
potentials then replace energy gains in the forward-looking balance losses.
"""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import AdamState, SeededRng, Tape, adam_step, bernoulli_mask, init_mlp
from .envs.base import Trajectory
from .exceptions import ConfigError, ContractError
from .gfn import balance_loss

logger = logging.getLogger(__name__)

EXACT_MASK_LIMIT = 16


class Redistribution(str, enum.Enum):
    UNIFORM_ERROR = "UNIFORM_ERROR"
    LED_STAR_CORRECTION = "LED_STAR_CORRECTION"
    NONE = "NONE"

    @classmethod
    def parse(cls, value) -> "Redistribution":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigError(f"unknown redistribution {value!r}; expected one of {[m.value for m in cls]}") from None


def default_keep_prob(max_trajectory_length: int) -> float:
    """Dropout of 10% for short trajectories (< 10 steps), 20% otherwise."""
    return 0.9 if max_trajectory_length < 10 else 0.8


@dataclass
class DecompositionConfig:
    keep_prob: float = 0.9
    n_inner_steps: int = 8
    batch_size: int = 32
    redistribution: Redistribution = Redistribution.UNIFORM_ERROR
    learning_rate: float = 1e-3
    buffer_capacity: int = 10_000
    use_buffer: bool = True
    method: str = "ls"

    def __post_init__(self):
        self.redistribution = Redistribution.parse(self.redistribution)
        if not 0.0 < self.keep_prob <= 1.0:
            raise ConfigError(f"keep_prob must lie in (0, 1], got {self.keep_prob}")
        if self.n_inner_steps < 1 or self.batch_size < 1 or self.buffer_capacity < 1:
            raise ConfigError("n_inner_steps, batch_size and buffer_capacity must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("potential learning_rate must be positive")
        if self.method not in ("ls", "proxy"):
            raise ConfigError(f"potential method must be 'ls' or 'proxy', got {self.method!r}")


class PotentialModel:
    """MLP over ``[state encoding | one-hot action]`` returning one scalar per transition."""

    def __init__(self, encoding_dim, action_count, hidden=(16, 16), rng=None,
                 activation="leaky_relu", name="potential"):
        rng = rng if rng is not None else SeededRng(0)
        self.encoding_dim = int(encoding_dim)
        self.action_count = int(action_count)
        self.net = init_mlp([self.encoding_dim + self.action_count, *hidden, 1], rng, activation, name)

    @classmethod
    def for_env(cls, env, hidden=(16, 16), rng=None, activation="leaky_relu"):
        return cls(env.encoding_dim, env.action_count, hidden, rng, activation)

    def parameters(self):
        return self.net.parameters()

    def load(self, params):
        self.net.load(params)

    def inputs(self, trajectories) -> np.ndarray:
        rows = []
        for t in trajectories:
            onehot = np.zeros((t.length, self.action_count))
            onehot[np.arange(t.length), t.actions] = 1.0
            rows.append(np.hstack([t.enc[:-1], onehot]))
        return np.vstack(rows)

    def predict(self, trajectories) -> list[np.ndarray]:
        """Raw potentials, one array of length T per trajectory."""
        flat = self.net(self.inputs(trajectories))[:, 0]
        return np.split(flat, np.cumsum([t.length for t in trajectories])[:-1])

    def on_tape(self, trajectories, tape: Tape):
        return dc.reshape(dc.forward_mlp(self.net, self.inputs(trajectories), tape), (-1,))


class ProxyModel:
    """State-level energy regressor; potentials are differences of its predictions."""

    def __init__(self, encoding_dim, hidden=(16, 16), rng=None, activation="leaky_relu", name="proxy"):
        rng = rng if rng is not None else SeededRng(0)
        self.net = init_mlp([encoding_dim, *hidden, 1], rng, activation, name)

    @classmethod
    def for_env(cls, env, hidden=(16, 16), rng=None, activation="leaky_relu"):
        return cls(env.encoding_dim, hidden, rng, activation)

    def parameters(self):
        return self.net.parameters()

    def load(self, params):
        self.net.load(params)

    def __call__(self, enc):
        return self.net(enc)[:, 0]


class ReplayBuffer:
    """FIFO ring of trajectories with uniform (with-replacement) sampling."""

    def __init__(self, capacity=10_000, rng=None):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self.rng = rng if rng is not None else SeededRng(0, stream=0xB0F)
        self.storage: list[Trajectory] = []
        self._next = 0

    def __len__(self):
        return len(self.storage)

    def add(self, trajectories) -> None:
        for t in trajectories:
            if len(self.storage) < self.capacity:
                self.storage.append(t)
            else:
                self.storage[self._next] = t
            self._next = (self._next + 1) % self.capacity

    def sample(self, k: int) -> list[Trajectory]:
        if not self.storage:
            raise ContractError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, len(self.storage), k)
        return [self.storage[i] for i in idx]

    def to_json(self, env) -> dict:
        return {
            "capacity": self.capacity,
            "next": self._next,
            "storage": [t.to_json(env) for t in self.storage],
            "rng": self.rng.get_state(),
        }

    def load_json(self, data: dict, env) -> None:
        self.capacity = int(data["capacity"])
        self._next = int(data["next"])
        self.storage = [Trajectory.from_json(t, env) for t in data["storage"]]
        self.rng.set_state(data["rng"])


# --- least-squares decomposition -----------------------------------------


def draw_mask(rng: SeededRng, length: int, keep_prob: float) -> np.ndarray:
    """Bernoulli keep-mask, redrawn until at least one transition survives."""
    while True:
        z = bernoulli_mask(rng, length, keep_prob)
        if z.any():
            return z


def ls_loss(potential: PotentialModel, trajectories, keep_prob, rng: SeededRng, tape: Tape):
    """Mean over trajectories of one dropout sample of the decomposition loss.

    Per trajectory: ``(E(x)/T - sum_t z_t phi_t / C)^2`` with ``C = sum_t z_t``.
    """
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    lengths = [t.length for t in trajectories]
    if min(lengths) < 1:
        raise ContractError("trajectories need at least one transition")
    tape.params(potential.parameters())
    phi = potential.on_tape(trajectories, tape)
    B, M = len(trajectories), sum(lengths)
    weights = np.zeros((B, M))
    start = 0
    for b, T in enumerate(lengths):
        z = draw_mask(rng, T, keep_prob)
        weights[b, start:start + T] = z / z.sum()
        start += T
    target = np.array([t.terminal_energy / t.length for t in trajectories])
    kept = dc.reshape(tape.constant(weights) @ dc.reshape(phi, (-1, 1)), (-1,))
    return dc.mean(dc.square(target - kept))


def ls_objective_exact(phi, energy, keep_prob) -> float:
    """Exact dropout expectation for one trajectory's potentials ``phi``.

    Masks with no surviving transition are excluded and the Bernoulli weights
    renormalized over the rest.
    """
    phi = np.asarray(phi, dtype=np.float64)
    T = phi.size
    if T > EXACT_MASK_LIMIT:
        raise ContractError(f"exact expectation enumerates 2^T masks; T={T} exceeds {EXACT_MASK_LIMIT}")
    if not 0.0 < keep_prob <= 1.0:
        raise ConfigError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    masks = np.array(list(itertools.product((0, 1), repeat=T)), dtype=np.float64)[1:]
    C = masks.sum(axis=1)
    prob = keep_prob**C * (1.0 - keep_prob) ** (T - C)
    prob /= prob.sum()
    err = energy / T - masks @ phi / C
    return float(prob @ (err * err))


def ls_loss_exact(potential: PotentialModel, trajectory: Trajectory, keep_prob) -> float:
    return ls_objective_exact(potential.predict([trajectory])[0], trajectory.terminal_energy, keep_prob)


def _batches(source, config: DecompositionConfig):
    if isinstance(source, ReplayBuffer):
        if len(source) == 0:
            return None
        return lambda: source.sample(config.batch_size)
    source = list(source)
    if not source:
        return None
    return lambda: source


def train_potentials(potential: PotentialModel, source, config: DecompositionConfig,
                     opt_state: AdamState, rng: SeededRng, on_step=None):
    """``n_inner_steps`` Adam steps on the dropout least-squares loss.

    ``source`` is a :class:`ReplayBuffer` (fresh uniform batch per step) or a
    list of trajectories used whole at every step. Returns the mean loss, or
    None when there was nothing to train on.
    """
    draw = _batches(source, config)
    if draw is None:
        logger.warning("potential update skipped: no trajectories available")
        return None
    losses = []
    for step in range(config.n_inner_steps):
        batch = draw()
        tape = Tape()
        loss = ls_loss(potential, batch, config.keep_prob, rng, tape)
        grads = dc.backward(tape, loss, potential.parameters())
        new, _ = adam_step(potential.parameters(), grads, opt_state)
        potential.load(new)
        losses.append(loss.item())
        if on_step is not None:
            on_step(step)
    return float(np.mean(losses))


def train_proxy(proxy: ProxyModel, source, config: DecompositionConfig, opt_state: AdamState, on_step=None):
    """Squared-error regression of terminal energy on terminal-state encodings."""
    draw = _batches(source, config)
    if draw is None:
        logger.warning("proxy update skipped: no trajectories available")
        return None
    losses = []
    for step in range(config.n_inner_steps):
        batch = draw()
        enc = np.vstack([t.enc[-1:] for t in batch])
        target = np.array([t.terminal_energy for t in batch])
        tape = Tape()
        tape.params(proxy.parameters())
        pred = dc.reshape(dc.forward_mlp(proxy.net, enc, tape), (-1,))
        loss = dc.mean(dc.square(pred - target))
        grads = dc.backward(tape, loss, proxy.parameters())
        new, _ = adam_step(proxy.parameters(), grads, opt_state)
        proxy.load(new)
        losses.append(loss.item())
        if on_step is not None:
            on_step(step)
    return float(np.mean(losses))


def proxy_difference_potentials(proxy: ProxyModel, trajectories) -> list[np.ndarray]:
    """``phi(s -> s') = proxy(s') - proxy(s)`` along each trajectory."""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    return [np.diff(proxy(t.enc)) for t in trajectories]


# --- redistribution and losses ------------------------------------------


def redistribute(phi, energy, mode=Redistribution.UNIFORM_ERROR) -> np.ndarray:
    """Close the gap ``E(x) - sum(phi)``: spread evenly, put on the last step, or leave it."""
    mode = Redistribution.parse(mode)
    phi = np.asarray(phi, dtype=np.float64)
    if mode is Redistribution.NONE:
        return phi.copy()
    gap = energy - phi.sum()
    if mode is Redistribution.UNIFORM_ERROR:
        return phi + gap / phi.size
    out = phi.copy()
    out[-1] += gap
    return out


def assign_potentials(potential, trajectories, redistribution=Redistribution.UNIFORM_ERROR):
    """Potentials used as credit for each trajectory, after redistribution."""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    if isinstance(potential, ProxyModel):
        raw = proxy_difference_potentials(potential, trajectories)
    else:
        raw = potential.predict(trajectories)
    return [redistribute(p, t.terminal_energy, redistribution) for p, t in zip(raw, trajectories)]


def led_db_loss(model, env, trajectories, potentials, tape):
    """Detailed balance with potentials as transition credit (potentials are constants)."""
    return balance_loss(model, env, trajectories, potentials, tape, "db")


def led_subtb_loss(model, env, trajectories, potentials, tape, subtb_lambda=0.9):
    return balance_loss(model, env, trajectories, potentials, tape, "subtb", subtb_lambda)


def potential_variance(potential, trajectories) -> float:
    """Mean over trajectories of the variance of raw potentials along the trajectory."""
    return float(np.mean([np.var(p) for p in potential.predict(trajectories)]))
