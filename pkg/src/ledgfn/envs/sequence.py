"""Sequence generation by prepending or appending tokens, with a synthetic landscape."""

from __future__ import annotations

from itertools import product

import numpy as np

from ..diffcore import SeededRng
from ..exceptions import ConfigError
from .base import Environment

LANDSCAPE_STREAM = 0x5E0
ALPHABET = "ACGTUVWXYZBDEFHIJKLMNOPQRS"
# enumeration cost cap for the exact mode-threshold quantile
_EXACT_QUANTILE_LIMIT = 1 << 20


class SequenceEnv(Environment):
    """Grow a token sequence to ``length`` by prepend/append actions.

    Actions ``0..vocab-1`` prepend a token, ``vocab..2*vocab-1`` append one.
    The log-reward of a (possibly partial) sequence is the sum of per-position
    token weights plus adjacent-pair bonuses, all drawn from ``landscape_seed``.
    """

    name = "sequence"
    has_intermediate_energy = True

    def __init__(self, vocab=4, length=8, landscape_seed=0, reward_exponent=3.0,
                 mode_quantile=0.99, mode_threshold=None):
        if vocab < 2 or length < 2:
            raise ConfigError(f"sequence env needs vocab >= 2 and length >= 2, got {vocab}, {length}")
        if vocab > len(ALPHABET):
            raise ConfigError(f"vocab {vocab} exceeds the {len(ALPHABET)}-letter alphabet")
        self.vocab = int(vocab)
        self.length = int(length)
        self.landscape_seed = int(landscape_seed)
        rng = SeededRng(self.landscape_seed, LANDSCAPE_STREAM)
        self.position_weights = rng.uniform(-1.0, 1.0, (self.length, self.vocab))
        self.pair_bonus = rng.uniform(-0.5, 0.5, (self.vocab, self.vocab))
        self.reward_exponent = float(reward_exponent)
        self.action_count = 2 * self.vocab
        self.max_trajectory_length = self.length
        self.encoding_dim = self.length * self.vocab + 1
        self.mode_quantile = float(mode_quantile)
        if mode_threshold is None:
            mode_threshold = float(np.exp(np.quantile(self._log_reward_sample(), mode_quantile)))
        self.mode_threshold = float(mode_threshold)

    def _log_reward_sample(self):
        if self.vocab**self.length <= _EXACT_QUANTILE_LIMIT:
            tokens = np.array(list(product(range(self.vocab), repeat=self.length)))
        else:
            tokens = SeededRng(self.landscape_seed, LANDSCAPE_STREAM + 1).integers(
                0, self.vocab, (100_000, self.length))
        return self.log_reward_batch(tokens)

    def log_reward_batch(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens)
        pos = np.arange(tokens.shape[1])
        out = self.position_weights[pos, tokens].sum(axis=1)
        if tokens.shape[1] > 1:
            out += self.pair_bonus[tokens[:, :-1], tokens[:, 1:]].sum(axis=1)
        return out

    def log_reward(self, state) -> float:
        if not state:
            return 0.0
        idx = np.asarray(state)
        value = self.position_weights[np.arange(len(state)), idx].sum()
        if len(state) > 1:
            value += self.pair_bonus[idx[:-1], idx[1:]].sum()
        return float(value)

    def initial_state(self):
        return ()

    def is_terminal(self, state):
        return len(state) == self.length

    def step(self, state, action):
        if action < self.vocab:
            return (action,) + state
        return state + (action - self.vocab,)

    def previous(self, state, action):
        return state[1:] if action < self.vocab else state[:-1]

    def forward_mask(self, state):
        return np.full(self.action_count, not self.is_terminal(state))

    def backward_mask(self, state):
        mask = np.zeros(self.action_count, dtype=bool)
        if state:
            mask[state[0]] = True
            mask[self.vocab + state[-1]] = True
        return mask

    def rank(self, state):
        return len(state)

    def encode(self, state):
        out = np.zeros(self.encoding_dim)
        if state:
            out[np.arange(len(state)) * self.vocab + np.asarray(state)] = 1.0
        out[-1] = len(state) / self.length
        return out

    def object_id(self, state):
        return "".join(ALPHABET[t] for t in state)

    def parse(self, text: str):
        """Inverse of :meth:`object_id` (handy in tests and configs)."""
        return tuple(ALPHABET.index(ch) for ch in text)

    def expected_reward(self, state):
        return float(np.exp(self.log_reward(state)))

    def partial_log_reward(self, state):
        return self.log_reward(state)

    def terminal_count(self):
        return self.vocab**self.length


def sequence_env(vocab=4, length=8, landscape_seed=0, **kwargs) -> SequenceEnv:
    return SequenceEnv(vocab, length, landscape_seed, **kwargs)
