import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ledgfn.diffcore import AdamState, SeededRng, Tape, backward, gradient_check
from ledgfn.envs import BagEnv, DagEnv, EnergyOracle, SetEnv, chain_env
from ledgfn.exceptions import ConfigError, ContractError
from ledgfn.gfn import (
    PolicyModel, balance_residuals, db_loss, fl_db_loss, fl_energy_gains, fl_subtb_loss, plain_gains,
    sample_trajectories,
)
from ledgfn.led import (
    DecompositionConfig, PotentialModel, ProxyModel, Redistribution, ReplayBuffer, assign_potentials,
    default_keep_prob, draw_mask, led_db_loss, led_subtb_loss, ls_loss, ls_loss_exact, ls_objective_exact,
    potential_variance, proxy_difference_potentials, redistribute, train_potentials, train_proxy,
)


def linear_potential(env, rows):
    """Linear potential with the state-part weight of node ``n`` set to ``rows[n]``."""
    pot = PotentialModel(env.encoding_dim, env.action_count, (), SeededRng(0), "linear")
    pot.net.weights[0][:] = 0.0
    pot.net.biases[0][:] = 0.0
    for node, value in rows.items():
        pot.net.weights[0][env.nodes.index(node), 0] = value
    return pot


def rollouts(env, n, seed=0):
    return sample_trajectories(env, PolicyModel.for_env(env, (8,), SeededRng(seed)), n, 0.05, SeededRng(seed, 9))


@pytest.fixture
def two_step():
    """Chain of two transitions with terminal energy 1 and potentials (1, 0)."""
    env = chain_env(2, reward=math.exp(-1.0))
    traj = rollouts(env, 1)[0]
    return env, traj, linear_potential(env, {"s0": 1.0, "s1": 0.0})


class TestLeastSquares:
    def test_exact_hand_value(self):
        assert ls_objective_exact([1.0, 0.0], 1.0, 0.5) == pytest.approx(1 / 6, abs=1e-12)

    @pytest.mark.parametrize("phi", [(0.5, 0.5), (1.0, 0.0)])
    def test_full_keep_cannot_tell_same_sum(self, phi):
        assert ls_objective_exact(phi, 1.0, 1.0) == 0.0

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.floats(-5, 5))
    def test_full_keep_single_term(self, phi, energy):
        T = len(phi)
        expected = (energy / T - sum(phi) / T) ** 2
        assert ls_objective_exact(phi, energy, 1.0) == pytest.approx(expected, abs=1e-12)

    def test_exact_from_model(self, two_step):
        _, traj, pot = two_step
        assert ls_loss_exact(pot, traj, 0.5) == pytest.approx(1 / 6, abs=1e-12)

    def test_monte_carlo_agrees(self, two_step):
        _, traj, pot = two_step
        rng = SeededRng(42)
        batch = [traj] * 100
        draws = np.array([ls_loss(pot, batch, 0.5, rng, Tape()).item() for _ in range(1000)])
        sigma = math.sqrt(1 / 72 / 100_000)  # per-draw variance is 1/72
        assert abs(draws.mean() - 1 / 6) < 3 * sigma

    def test_exact_guard(self):
        with pytest.raises(ContractError):
            ls_objective_exact(np.zeros(17), 1.0, 0.9)
        with pytest.raises(ConfigError):
            ls_objective_exact([1.0], 1.0, 0.0)

    def test_empty_trajectory_rejected(self, two_step):
        _, traj, pot = two_step
        empty = type(traj)([traj.states[0]], [], 0.0, 1.0)
        with pytest.raises(ContractError):
            ls_loss(pot, [empty], 0.9, SeededRng(0), Tape())

    @given(st.integers(1, 12), st.floats(0.01, 1.0), st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_masks_never_empty(self, length, keep, seed):
        rng = SeededRng(seed)
        for _ in range(5):
            assert draw_mask(rng, length, keep).sum() >= 1

    def test_gradient(self):
        env = BagEnv(3, 4, 3)
        trajs = rollouts(env, 6)
        pot = PotentialModel.for_env(env, (6,), SeededRng(3), "tanh")

        def fn(params, tape):
            pot.load(params)
            return ls_loss(pot, trajs, 0.7, SeededRng(5), tape)

        assert gradient_check(pot.parameters(), fn) < 1e-5


class TestTrainPotentials:
    def test_single_transition_converges(self):
        env = chain_env(1, reward=math.exp(-2.0))
        traj = rollouts(env, 1)
        pot = PotentialModel.for_env(env, (8,), SeededRng(1))
        config = DecompositionConfig(keep_prob=0.9, n_inner_steps=3000, batch_size=1, learning_rate=1e-2)
        train_potentials(pot, traj, config, AdamState(learning_rate=1e-2), SeededRng(2))
        assert pot.predict(traj)[0][0] == pytest.approx(2.0, abs=1e-3)

    def test_zero_energy_drives_to_zero(self):
        env = chain_env(4, reward=1.0)
        traj = rollouts(env, 1)
        pot = linear_potential(env, {"s0": 0.7, "s1": -0.4, "s2": 0.3, "s3": 1.1})
        config = DecompositionConfig(keep_prob=0.8, n_inner_steps=2000, batch_size=1, learning_rate=1e-2)
        train_potentials(pot, traj, config, AdamState(learning_rate=1e-2), SeededRng(2))
        assert np.abs(pot.predict(traj)[0]).max() < 1e-2

    def test_shared_transition_compromise(self):
        env = DagEnv({"r": ["m"], "m": ["x", "y"]}, {"x": math.exp(-2.0), "y": math.exp(-4.0)})
        rng = SeededRng(0)
        model = PolicyModel.for_env(env, (4,))
        trajs = []
        while len({t.terminal for t in trajs}) < 2:
            trajs = sample_trajectories(env, model, 2, 0.0, rng)
        pot = linear_potential(env, {})
        config = DecompositionConfig(keep_prob=0.5, n_inner_steps=4000, batch_size=2, learning_rate=1e-2)
        train_potentials(pot, trajs, config, AdamState(learning_rate=1e-2), SeededRng(1))
        shared = [p[0] for p in pot.predict(trajs)]
        assert shared[0] == pytest.approx(shared[1], abs=1e-12)
        assert 1.0 + 0.05 < shared[0] < 2.0 - 0.05
        assert sum(ls_loss_exact(pot, t, 0.5) for t in trajs) > 1e-3

    def test_empty_source_skips(self, caplog):
        env = BagEnv(3, 4, 3)
        pot = PotentialModel.for_env(env)
        before = [w.copy() for w in pot.net.weights]
        out = train_potentials(pot, ReplayBuffer(4), DecompositionConfig(), AdamState(), SeededRng(0))
        assert out is None and "skipped" in caplog.text
        assert all(np.array_equal(a, b) for a, b in zip(before, pot.net.weights))

    def test_dropout_lowers_variance(self):
        env = BagEnv()
        trajs = rollouts(env, 300, seed=4)
        out = {}
        for keep in (0.8, 1.0):
            pot = PotentialModel.for_env(env, (16, 16), SeededRng(7))
            buf = ReplayBuffer(1000, SeededRng(8))
            buf.add(trajs)
            config = DecompositionConfig(keep_prob=keep, n_inner_steps=400, batch_size=32)
            train_potentials(pot, buf, config, AdamState(learning_rate=1e-3), SeededRng(9))
            out[keep] = potential_variance(pot, trajs)
        assert out[0.8] < out[1.0]


class TestRedistribution:
    def test_uniform_example(self):
        np.testing.assert_allclose(redistribute([0.2, 0.2], 1.0, "UNIFORM_ERROR"), [0.5, 0.5], atol=1e-15)

    def test_led_star_example(self):
        np.testing.assert_allclose(redistribute([0.2, 0.2], 1.0, "LED_STAR_CORRECTION"), [0.2, 0.8], atol=1e-15)

    @pytest.mark.parametrize("mode", list(Redistribution))
    def test_exact_decomposition_unchanged(self, mode):
        np.testing.assert_array_equal(redistribute([0.25, 0.75], 1.0, mode), [0.25, 0.75])

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(-20, 20),
           st.sampled_from(["UNIFORM_ERROR", "LED_STAR_CORRECTION"]))
    def test_sums_to_energy(self, phi, energy, mode):
        assert abs(redistribute(phi, energy, mode).sum() - energy) < 1e-9

    def test_none_is_raw(self):
        env = BagEnv(3, 4, 3)
        trajs = rollouts(env, 5)
        pot = PotentialModel.for_env(env, (4,), SeededRng(1))
        for a, b in zip(assign_potentials(pot, trajs, "NONE"), pot.predict(trajs)):
            np.testing.assert_array_equal(a, b)

    def test_parse(self):
        assert Redistribution.parse("led_star_correction") is Redistribution.LED_STAR_CORRECTION
        with pytest.raises(ConfigError):
            Redistribution.parse("halfway")


class TestLedLosses:
    @pytest.fixture
    def set_batch(self):
        env = SetEnv(8, 4)
        model = PolicyModel.for_env(env, (8,), SeededRng(2))
        trajs = sample_trajectories(env, model, 12, 0.2, SeededRng(3))
        return env, model, trajs, fl_energy_gains(EnergyOracle(env), trajs)

    def test_equals_fl_db(self, set_batch):
        env, model, trajs, gains = set_batch
        a = led_db_loss(model, env, trajs, gains, Tape()).item()
        b = fl_db_loss(model, env, trajs, EnergyOracle(env), Tape()).item()
        assert abs(a - b) < 1e-9

    def test_equals_fl_subtb(self, set_batch):
        env, model, trajs, gains = set_batch
        a = led_subtb_loss(model, env, trajs, gains, Tape(), 0.9).item()
        b = fl_subtb_loss(model, env, trajs, EnergyOracle(env), Tape(), 0.9).item()
        assert abs(a - b) < 1e-9

    def test_zero_potentials_reduce_to_db(self, set_batch):
        env, model, trajs, _ = set_batch
        zeros = [np.zeros(t.length) for t in trajs]
        # plain DB clamps the terminal flow to -E(x); zero credit instead leaves it at 0
        for z, t in zip(zeros, trajs):
            z[-1] = t.terminal_energy
        assert led_db_loss(model, env, trajs, zeros, Tape()).item() == pytest.approx(
            db_loss(model, env, trajs, Tape()).item(), abs=1e-12)

    def test_small_lambda_matches_db_form(self, set_batch):
        env, model, trajs, gains = set_batch
        a = led_subtb_loss(model, env, trajs[:1], gains[:1], Tape(), 1e-9).item()
        b = led_db_loss(model, env, trajs[:1], gains[:1], Tape()).item()
        assert a == pytest.approx(b, rel=1e-6)

    def test_uniform_error_full_residual_is_tb(self, set_batch):
        env, model, trajs, _ = set_batch
        pot = PotentialModel.for_env(env, (8,), SeededRng(5))
        phi = assign_potentials(pot, trajs)
        full = balance_residuals(model, env, trajs, phi, "tb")
        tb = balance_residuals(model, env, trajs, plain_gains(trajs), "tb")
        np.testing.assert_allclose(full, tb, atol=1e-9)

    def test_residual_squared(self, set_batch):
        env, model, trajs, gains = set_batch
        r = balance_residuals(model, env, trajs, gains, "db")
        assert led_db_loss(model, env, trajs, gains, Tape()).item() == pytest.approx(np.mean(r**2), rel=1e-12)

    def test_no_gradient_leakage(self, set_batch):
        env, model, trajs, _ = set_batch
        pot = PotentialModel.for_env(env, (8,), SeededRng(5))
        phi = assign_potentials(pot, trajs)

        def grads():
            tape = Tape()
            loss = led_db_loss(model, env, trajs, phi, tape)
            return backward(tape, loss, model.parameters())

        g1 = grads()
        for w in pot.net.weights:
            w += 0.5
        g2 = grads()
        for k in g1:
            np.testing.assert_array_equal(g1[k], g2[k])
        tape = Tape()
        led_db_loss(model, env, trajs, phi, tape)
        assert not set(pot.parameters()) & set(tape.registered)


class TestProxy:
    def test_constant_proxy_zero(self):
        env = BagEnv(3, 4, 3)
        proxy = ProxyModel.for_env(env, (4,), SeededRng(0))
        for w in proxy.net.weights:
            w[:] = 0.0
        proxy.net.biases[-1][:] = 3.0
        for p in proxy_difference_potentials(proxy, rollouts(env, 5)):
            np.testing.assert_array_equal(p, 0.0)

    def test_telescoping(self):
        env = BagEnv(3, 4, 3)
        trajs = rollouts(env, 8)
        proxy = ProxyModel.for_env(env, (4,), SeededRng(1))
        for p, t in zip(proxy_difference_potentials(proxy, trajs), trajs):
            ends = proxy(env.encode_batch([t.states[0], t.terminal]))
            assert p.sum() == pytest.approx(ends[1] - ends[0], abs=1e-12)

    def test_training_reduces_error(self):
        env = BagEnv(3, 4, 3)
        trajs = rollouts(env, 64)
        proxy = ProxyModel.for_env(env, (16,), SeededRng(1))
        config = DecompositionConfig(n_inner_steps=5, batch_size=64)
        first = train_proxy(proxy, trajs, config, AdamState(learning_rate=1e-2))
        config.n_inner_steps = 500
        last = train_proxy(proxy, trajs, config, AdamState(learning_rate=1e-2))
        assert last < first


class TestConfigAndBuffer:
    def test_default_keep_prob(self):
        assert default_keep_prob(9) == 0.9 and default_keep_prob(10) == 0.8

    @pytest.mark.parametrize("kwargs", [{"keep_prob": 0.0}, {"keep_prob": 1.2}, {"n_inner_steps": 0},
                                        {"learning_rate": -1.0}, {"method": "lstm"}])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            DecompositionConfig(**kwargs)

    def test_fifo(self):
        env = chain_env(2)
        trajs = rollouts(env, 5)
        for i, t in enumerate(trajs):
            t.terminal_reward = float(i)
        buf = ReplayBuffer(3, SeededRng(0))
        buf.add(trajs)
        assert len(buf) == 3
        assert sorted(t.terminal_reward for t in buf.storage) == [2.0, 3.0, 4.0]

    def test_uniform_sampling(self):
        env = chain_env(1)
        trajs = rollouts(env, 4)
        for i, t in enumerate(trajs):
            t.terminal_reward = float(i)
        buf = ReplayBuffer(4, SeededRng(0))
        buf.add(trajs)
        n = 40_000
        counts = np.bincount([int(t.terminal_reward) for t in buf.sample(n)], minlength=4)
        assert np.all(np.abs(counts - n / 4) < 3 * math.sqrt(n * 0.1875))

    def test_json_round_trip(self):
        env = BagEnv(3, 4, 3)
        buf = ReplayBuffer(10, SeededRng(0))
        buf.add(rollouts(env, 12))
        buf.sample(3)
        data = buf.to_json(env)
        other = ReplayBuffer(1, SeededRng(99))
        other.load_json(data, env)
        assert [t.states for t in other.sample(5)] == [t.states for t in buf.sample(5)]

    def test_empty_sample(self):
        with pytest.raises(ContractError):
            ReplayBuffer(2).sample(1)
