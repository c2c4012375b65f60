import math

import numpy as np
import pytest

from ledgfn.diffcore import SeededRng
from ledgfn.envs import BagEnv, EnergyOracle, enumerate_terminals, two_leaf_tree
from ledgfn.envs.base import Trajectory
from ledgfn.exceptions import EnumerationTooLarge
from ledgfn.gfn import PolicyModel, exact_policy_distribution
from ledgfn.metrics import (
    ModeTracker, TopKTracker, empirical_distribution, fit_report, goodness_of_fit, oracle_report, record_round,
)


def finished(counts, reward):
    return Trajectory([(tuple(counts), True)], [], 0.0, float(reward))


def boltzmann_model(env):
    """Two-leaf policy whose forward marginal is exactly the target."""
    model = PolicyModel.for_env(env, (2,), SeededRng(0))
    for w, b in zip(model.net.weights, model.net.biases):
        w[:] = 0.0
        b[:] = 0.0
    model.net.biases[-1][0] = 1.0
    return model


def uniform_model(env):
    model = PolicyModel.for_env(env, (2,), SeededRng(0))
    for w, b in zip(model.net.weights, model.net.biases):
        w[:] = 0.0
        b[:] = 0.0
    return model


class TestModes:
    def test_threshold_inclusive(self):
        env = BagEnv()
        modes = ModeTracker(30.0)
        batch = [finished((7, 0, 0, 0, 0, 0, 0), 31), finished((0, 7, 0, 0, 0, 0, 0), 30),
                 finished((0, 0, 7, 0, 0, 0, 0), 29)]
        assert modes.update(env, batch) == 2 and modes.count == 2

    def test_duplicate_keeps_count_and_max(self):
        env = BagEnv()
        modes, topk = ModeTracker(30.0), TopKTracker(5)
        record_round(modes, topk, env, [finished((7, 0, 0, 0, 0, 0, 0), 30)])
        record_round(modes, topk, env, [finished((7, 0, 0, 0, 0, 0, 0), 35)])
        assert modes.count == 1
        assert topk.best == {(7, 0, 0, 0, 0, 0, 0): 35.0}

    def test_first_sighting_rule(self):
        env = BagEnv()
        modes = ModeTracker(30.0)
        modes.update(env, [finished((7, 0, 0, 0, 0, 0, 0), 10)])
        modes.update(env, [finished((7, 0, 0, 0, 0, 0, 0), 30)])
        assert modes.count == 0

    def test_empty_batch(self):
        env = BagEnv()
        modes, topk = ModeTracker(30.0), TopKTracker()
        record_round(modes, topk, env, [])
        assert modes.count == 0 and topk.mean == 0.0 and modes.history == [0]

    def test_order_invariance(self):
        env = BagEnv()
        rng = np.random.default_rng(0)
        batch = [finished(tuple(rng.integers(0, 3, 7)), r) for r in rng.choice([10.0, 30.0, 0.1], 200)]
        # repeated keys with different rewards inside one batch are the interesting case
        batch += [finished(t.terminal[0], 30.0) for t in batch[:20]]
        results = set()
        for seed in range(5):
            order = np.random.default_rng(seed).permutation(len(batch))
            modes, topk = ModeTracker(30.0), TopKTracker(10)
            record_round(modes, topk, env, [batch[i] for i in order])
            results.add((modes.count, topk.mean))
        assert len(results) == 1

    def test_monotone_history(self):
        env = BagEnv()
        modes = ModeTracker(30.0)
        for i in range(6):
            modes.update(env, [finished((i, 7, 0, 0, 0, 0, 0), 30 if i % 2 else 10)])
        assert modes.history == sorted(modes.history)


class TestTopK:
    def test_keeps_best_k(self):
        env = BagEnv()
        topk = TopKTracker(3)
        topk.update(env, [finished((i, 0, 0, 0, 0, 0, 0), r) for i, r in enumerate([5, 1, 9, 7, 3])])
        assert sorted(topk.best.values()) == [5.0, 7.0, 9.0]
        assert topk.mean == pytest.approx(7.0)

    def test_minimum_dominates_rejects(self):
        env = BagEnv()
        topk = TopKTracker(4)
        rng = np.random.default_rng(1)
        rewards = rng.normal(size=50)
        for i, r in enumerate(rewards):
            topk.update(env, [finished((i % 16, i // 16, 0, 0, 0, 0, 0), r)])
        assert len(topk.best) == 4
        assert min(topk.best.values()) == pytest.approx(np.sort(rewards)[-4])


class TestFit:
    def test_exact_match_zero(self):
        env = two_leaf_tree()
        report = goodness_of_fit(env, boltzmann_model(env))
        assert report.l1_distance == pytest.approx(0.0, abs=1e-12)
        assert report.relative_mean_error == pytest.approx(0.0, abs=1e-12)

    def test_sampled_close_for_matching_model(self):
        env = two_leaf_tree()
        report = goodness_of_fit(env, boltzmann_model(env), 1_000_000, SeededRng(3), exact=False)
        assert report.l1_distance < 0.02 and report.sample_count == 1_000_000

    def test_uniform_tiny_set_by_hand(self, tiny_set):
        pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        u = tiny_set.utilities
        rewards = np.array([(u[i] + u[j]) / 2 for i, j in pairs])
        p_star = rewards / rewards.sum()
        expected_l1 = np.abs(1 / 6 - p_star).sum()
        mu_star, mu_hat = p_star @ rewards, rewards.mean()
        report = goodness_of_fit(tiny_set, uniform_model(tiny_set))
        assert report.l1_distance == pytest.approx(expected_l1, abs=1e-12)
        assert report.relative_mean_error == pytest.approx(abs(mu_hat - mu_star) / mu_star, abs=1e-12)

    def test_exact_variant_repeatable(self, tiny_bag):
        model = PolicyModel.for_env(tiny_bag, (8,), SeededRng(5))
        a = goodness_of_fit(tiny_bag, model)
        b = goodness_of_fit(tiny_bag, model)
        assert a.l1_distance == b.l1_distance and a.relative_mean_error == b.relative_mean_error

    def test_bounds(self, tiny_bag):
        target = enumerate_terminals(tiny_bag)
        k = target.keys[0]
        report = fit_report(target, {k: 1.0})
        assert 0 <= report.l1_distance <= 2 and report.relative_mean_error >= 0

    def test_larger_sample_closer(self, tiny_set):
        model = PolicyModel.for_env(tiny_set, (8,), SeededRng(2))
        exact = exact_policy_distribution(tiny_set, model)

        def gap(n, rng):
            emp = empirical_distribution(tiny_set, model, n, rng)
            return sum(abs(emp.get(k, 0.0) - p) for k, p in exact.items())

        wins = sum(gap(20_000, SeededRng(s, 2)) < gap(1_000, SeededRng(s, 1)) for s in range(10))
        assert wins >= 9

    def test_empirical_sums_to_one(self, tiny_bag):
        dist = empirical_distribution(tiny_bag, PolicyModel.for_env(tiny_bag), 2_500, SeededRng(0), chunk=1_000)
        assert math.fsum(dist.values()) == pytest.approx(1.0)

    def test_refuses_huge_space(self):
        env = BagEnv()
        with pytest.raises(EnumerationTooLarge):
            goodness_of_fit(env, PolicyModel.for_env(env), limit=1_000)


def test_oracle_report_fresh():
    assert oracle_report(EnergyOracle(BagEnv())) == (0, 0)
