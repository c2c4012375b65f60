import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ledgfn.diffcore import SeededRng
from ledgfn.envs import BagEnv, SetEnv, two_leaf_tree
from ledgfn.estimators import GFlowNetSampler, LearnedEnergyDecomposition
from ledgfn.exceptions import ConfigError
from ledgfn.gfn import PolicyModel, sample_trajectories


def trajectories(env, n, seed=0):
    return sample_trajectories(env, PolicyModel.for_env(env, (8,), SeededRng(seed)), n, 0.1, SeededRng(seed, 3))


class TestSampler:
    def test_two_leaf_tb(self):
        est = GFlowNetSampler("TB", hidden=(8,), learning_rate=1e-2, rounds=300, batch_size=16, epsilon=0.2)
        est.fit(two_leaf_tree())
        p = est.exact_distribution()
        assert p["a"] == pytest.approx(np.e / (np.e + 1), abs=0.02)
        assert est.score() > -0.05
        assert len(est.loss_history_) == 300

    def test_led_fit_attributes(self):
        est = GFlowNetSampler("LED_DB", hidden=(8,), rounds=5, batch_size=4).fit(BagEnv(3, 4, 3))
        assert est.potential_ is not None and est.oracle_calls_ == (20, 0)
        assert len(est.sample(7)) == 7

    def test_clone_and_params(self):
        est = GFlowNetSampler("SubTB", rounds=3)
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        assert twin.set_params(rounds=9).rounds == 9

    def test_deterministic(self):
        env = BagEnv(3, 4, 3)
        a = GFlowNetSampler("DB", hidden=(4,), rounds=10, batch_size=4, random_state=3).fit(env)
        b = GFlowNetSampler("DB", hidden=(4,), rounds=10, batch_size=4, random_state=3).fit(env)
        np.testing.assert_array_equal(a.loss_history_, b.loss_history_)

    def test_errors(self):
        with pytest.raises(NotFittedError):
            GFlowNetSampler().sample(1)
        with pytest.raises(ConfigError):
            GFlowNetSampler().fit([1, 2, 3])
        with pytest.raises(ConfigError):
            GFlowNetSampler("nonsense").fit(BagEnv(3, 4, 3))


class TestDecomposition:
    def test_fit_transform_sums(self):
        env = SetEnv(6, 3)
        trajs = trajectories(env, 40)
        out = LearnedEnergyDecomposition(hidden=(8,), n_steps=50).fit_transform(trajs)
        for phi, t in zip(out, trajs):
            assert abs(phi.sum() - t.terminal_energy) < 1e-9

    def test_buffer_batches_and_variance(self):
        env = BagEnv(3, 4, 3)
        trajs = trajectories(env, 30)
        est = LearnedEnergyDecomposition(hidden=(8,), n_steps=20, batch_size=8).fit(trajs)
        assert est.within_trajectory_variance(trajs) >= 0.0
        assert [len(p) for p in est.raw_potentials(trajs)] == [t.length for t in trajs]

    def test_proxy(self):
        env = BagEnv(3, 4, 3)
        trajs = trajectories(env, 20)
        est = LearnedEnergyDecomposition(hidden=(8,), n_steps=20, method="proxy").fit(trajs)
        assert type(est.model_).__name__ == "ProxyModel"
        assert len(est.transform(trajs[0])) == 1

    def test_rejects_raw_input(self):
        with pytest.raises(ConfigError):
            LearnedEnergyDecomposition().fit([np.zeros(3)])
        with pytest.raises(ConfigError):
            LearnedEnergyDecomposition().fit([])
