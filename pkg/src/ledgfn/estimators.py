"""scikit-learn style wrappers around the functional training core.

``GFlowNetSampler.fit(env)`` trains a sampler on an environment.
``LearnedEnergyDecomposition.fit(trajectories)`` learns per-transition
potentials and ``transform`` returns them (redistributed) per trajectory.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .diffcore import AdamState, SeededRng
from .envs.base import Environment, Trajectory
from .envs.enumerate import DEFAULT_LIMIT, enumerate_terminals
from .exceptions import ConfigError
from .gfn import ObjectiveKind, exact_policy_distribution, sample_trajectories
from .led import (
    DecompositionConfig, PotentialModel, ProxyModel, Redistribution, assign_potentials, default_keep_prob,
    potential_variance, train_potentials, train_proxy,
)
from .metrics import goodness_of_fit


class GFlowNetSampler(BaseEstimator):
    """Amortized sampler trained with a balance objective.

    Parameters mirror the run configuration; ``keep_prob=None`` picks the
    dropout rate from the environment's maximum trajectory length.
    """

    def __init__(self, objective="TB", hidden=(16, 16), learning_rate=1e-3, log_z_learning_rate=0.1,
                 batch_size=16, rounds=1000, epsilon=0.0, subtb_lambda=0.9, activation="leaky_relu",
                 keep_prob=None, n_inner_steps=8, potential_learning_rate=1e-3,
                 redistribution="UNIFORM_ERROR", use_buffer=True, random_state=0):
        self.objective = objective
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.log_z_learning_rate = log_z_learning_rate
        self.batch_size = batch_size
        self.rounds = rounds
        self.epsilon = epsilon
        self.subtb_lambda = subtb_lambda
        self.activation = activation
        self.keep_prob = keep_prob
        self.n_inner_steps = n_inner_steps
        self.potential_learning_rate = potential_learning_rate
        self.redistribution = redistribution
        self.use_buffer = use_buffer
        self.random_state = random_state

    def _run_config(self, env):
        from .harness.config import RunConfig

        kind = ObjectiveKind.parse(self.objective)
        led = None
        if kind.is_led:
            keep = self.keep_prob if self.keep_prob is not None else default_keep_prob(env.max_trajectory_length)
            led = DecompositionConfig(keep_prob=keep, n_inner_steps=self.n_inner_steps, batch_size=self.batch_size,
                                      redistribution=self.redistribution,
                                      learning_rate=self.potential_learning_rate, use_buffer=self.use_buffer)
        return RunConfig(objective=kind, rounds=int(self.rounds), batch_size=int(self.batch_size),
                         learning_rate=self.learning_rate, log_z_learning_rate=self.log_z_learning_rate,
                         hidden=tuple(self.hidden), activation=self.activation, epsilon=self.epsilon,
                         subtb_lambda=self.subtb_lambda, led=led, seeds=(int(self.random_state),), fit="off")

    def fit(self, X: Environment, y=None):
        """Train on environment ``X`` for ``rounds`` rounds."""
        from .harness.trainer import Trainer

        if not isinstance(X, Environment):
            raise ConfigError(f"fit expects an Environment, got {type(X).__name__}")
        trainer = Trainer(self._run_config(X), int(self.random_state), env=X)
        losses = []
        for _ in range(int(self.rounds)):
            losses.append(trainer.step())
        self.env_ = X
        self.policy_ = trainer.policy
        self.potential_ = trainer.potential
        self.loss_history_ = np.asarray(losses)
        self.n_modes_ = trainer.modes.count
        self.oracle_calls_ = trainer.oracle.counters
        return self

    def sample(self, n: int, random_state=None):
        """Draw ``n`` terminal objects with exploration off."""
        check_is_fitted(self, "policy_")
        seed = self.random_state if random_state is None else random_state
        trajs = sample_trajectories(self.env_, self.policy_, int(n), 0.0, SeededRng(int(seed), 0x5A3))
        return [t.terminal for t in trajs]

    def exact_distribution(self, limit=DEFAULT_LIMIT) -> dict:
        """Marginal of the forward policy over terminal keys."""
        check_is_fitted(self, "policy_")
        return exact_policy_distribution(self.env_, self.policy_, limit)

    def score(self, X=None, y=None) -> float:
        """Negative L1 distance to the Boltzmann target (higher is better)."""
        check_is_fitted(self, "policy_")
        env = self.env_ if X is None else X
        return -goodness_of_fit(env, self.policy_, exact=True, target=enumerate_terminals(env)).l1_distance


class LearnedEnergyDecomposition(TransformerMixin, BaseEstimator):
    """Learns transition potentials whose sum along a trajectory matches its energy.

    ``X`` is a list of prepared :class:`Trajectory` objects. ``method='proxy'``
    fits a terminal-energy regressor and uses differences of its predictions.
    """

    def __init__(self, hidden=(16, 16), keep_prob=0.9, n_steps=500, batch_size=None, learning_rate=1e-3,
                 redistribution="UNIFORM_ERROR", activation="leaky_relu", method="ls", random_state=0):
        self.hidden = hidden
        self.keep_prob = keep_prob
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.redistribution = redistribution
        self.activation = activation
        self.method = method
        self.random_state = random_state

    @staticmethod
    def _check_trajectories(X):
        X = [X] if isinstance(X, Trajectory) else list(X)
        if not X:
            raise ConfigError("no trajectories given")
        for t in X:
            if not isinstance(t, Trajectory) or t.enc is None:
                raise ConfigError("expected prepared Trajectory objects (call Trajectory.prepare(env))")
        return X

    def fit(self, X, y=None):
        from .led import ReplayBuffer

        X = self._check_trajectories(X)
        enc_dim = X[0].enc.shape[1]
        action_count = X[0].fmask.shape[1]
        init = SeededRng(int(self.random_state), 2)
        config = DecompositionConfig(keep_prob=self.keep_prob, n_inner_steps=int(self.n_steps),
                                     batch_size=int(self.batch_size or len(X)),
                                     redistribution=self.redistribution, learning_rate=self.learning_rate,
                                     method=self.method)
        source = X
        if self.batch_size is not None:
            source = ReplayBuffer(max(len(X), 1), SeededRng(int(self.random_state), 5))
            source.add(X)
        opt = AdamState(learning_rate=self.learning_rate)
        if self.method == "proxy":
            self.model_ = ProxyModel(enc_dim, tuple(self.hidden), init, self.activation)
            self.final_loss_ = train_proxy(self.model_, source, config, opt)
        else:
            self.model_ = PotentialModel(enc_dim, action_count, tuple(self.hidden), init, self.activation)
            self.final_loss_ = train_potentials(self.model_, source, config, opt,
                                                SeededRng(int(self.random_state), 6))
        return self

    def transform(self, X):
        """Redistributed potentials: a list with one length-T array per trajectory."""
        check_is_fitted(self, "model_")
        X = self._check_trajectories(X)
        return assign_potentials(self.model_, X, Redistribution.parse(self.redistribution))

    def raw_potentials(self, X):
        check_is_fitted(self, "model_")
        X = self._check_trajectories(X)
        return assign_potentials(self.model_, X, Redistribution.NONE)

    def within_trajectory_variance(self, X) -> float:
        check_is_fitted(self, "model_")
        if isinstance(self.model_, ProxyModel):
            return float(np.mean([np.var(p) for p in self.raw_potentials(X)]))
        return potential_variance(self.model_, self._check_trajectories(X))
