"""Tests for the replay buffer, warm-up, DDQN targets and training loop."""

import functools

import numpy as np
import pytest
from scipy import stats

from oll_dac.errors import ConfigurationError, UsageError
from oll_dac.metrics import best_policy_selection, evaluate
from oll_dac.neural import Mlp
from oll_dac.onemax_env import EnvConfig, OneMaxDacEnv
from oll_dac.policy import DiscreteTheoryPolicy
from oll_dac.reward import RewardSpec
from oll_dac.rl_ddqn import (
    DdqnConfig,
    DdqnTrainer,
    ReplayBuffer,
    Transition,
    TransitionBatch,
    q_loss_gradients,
    tabular_shift_oracle,
    td_target,
    warmup,
)
from oll_dac.seeding import derive_seed_list


def _tiny_config(**overrides) -> DdqnConfig:
    values = dict(
        env=EnvConfig(n=8),
        batch_size=16,
        buffer_capacity=500,
        warmup_transitions=64,
        total_steps=40,
        checkpoint_every=20,
        hidden_units=8,
        quick_eval_seeds=(11, 12, 13),
        seed=5,
    )
    values.update(overrides)
    return DdqnConfig(**values)


# =============================================================================
# Replay buffer and warm-up
# =============================================================================


class TestReplayBuffer:
    """Ring-buffer storage and sampling."""

    def test_overwrites_oldest(self) -> None:
        buffer = ReplayBuffer(3)
        for i in range(5):
            buffer.add(Transition(i / 10, 0, float(i), 0.0, False))
        assert len(buffer) == 3
        assert sorted(buffer.rewards()) == [2.0, 3.0, 4.0]

    def test_sample_shapes(self, rng: np.random.Generator) -> None:
        buffer = ReplayBuffer(10)
        for i in range(4):
            buffer.add(Transition(0.1 * i, i % 2, -1.0, 0.1 * (i + 1), i == 3))
        batch = buffer.sample(32, rng)
        assert len(batch) == 32
        assert set(batch.actions.tolist()) <= {0, 1}

    def test_empty_sample(self, rng: np.random.Generator) -> None:
        with pytest.raises(UsageError):
            ReplayBuffer(4).sample(2, rng)

    def test_bad_capacity(self) -> None:
        with pytest.raises(ConfigurationError):
            ReplayBuffer(0)

    def test_sampling_is_uniform_after_wraparound(self) -> None:
        buffer = ReplayBuffer(8)
        for i in range(21):
            buffer.add(Transition(i / 100, 0, float(i), 0.0, False))
        indices = buffer.sample_indices(80_000, np.random.default_rng(3))
        counts = np.bincount(indices, minlength=8)
        assert counts.shape == (8,)
        assert stats.chisquare(counts).pvalue > 0.01


class TestWarmup:
    """Uniform-random transitions and adaptive bias resolution."""

    def test_fills_buffer(self, rng: np.random.Generator) -> None:
        env = OneMaxDacEnv(EnvConfig(n=20))
        env.reset(seed=1)
        buffer = ReplayBuffer(1000)
        result = warmup(env, buffer, rng, 200, RewardSpec.naive())
        assert len(buffer) == 200
        assert result.naive_rewards.shape == (200,)
        assert np.array_equal(np.sort(buffer.rewards()), np.sort(result.naive_rewards))
        assert result.stats.count == 200

    def test_resolves_adaptive_bias(self, rng: np.random.Generator) -> None:
        env = OneMaxDacEnv(EnvConfig(n=50))
        env.reset(seed=2)
        buffer = ReplayBuffer(1000)
        spec = RewardSpec.parse("shifted_adaptive")
        result = warmup(env, buffer, rng, 500, spec)
        assert not result.reward_spec.needs_resolution
        shifted = np.sort(buffer.rewards())
        assert np.allclose(shifted, np.sort(result.naive_rewards) + result.reward_spec.resolved_bias)

    def test_requires_empty_buffer(self, rng: np.random.Generator) -> None:
        env = OneMaxDacEnv(EnvConfig(n=10))
        env.reset(seed=0)
        buffer = ReplayBuffer(10)
        buffer.add(Transition(0.0, 0, 0.0, 0.0, False))
        with pytest.raises(UsageError):
            warmup(env, buffer, rng, 5, RewardSpec.naive())


# =============================================================================
# Targets and training
# =============================================================================


class TestTdTarget:
    """Double-Q bootstrapped targets."""

    def _batch(self, done: bool) -> TransitionBatch:
        return TransitionBatch(
            states=np.array([0.2]),
            actions=np.array([0]),
            rewards=np.array([-3.0]),
            next_states=np.array([0.4]),
            dones=np.array([done]),
        )

    def test_terminal_uses_reward_only(self) -> None:
        online = Mlp([np.zeros((1, 2))], [np.array([1.0, 5.0])])
        target = Mlp([np.zeros((1, 2))], [np.array([7.0, 2.0])])
        assert td_target(self._batch(True), online, target, 0.9)[0] == -3.0

    def test_online_selects_target_evaluates(self) -> None:
        online = Mlp([np.zeros((1, 2))], [np.array([1.0, 5.0])])
        target = Mlp([np.zeros((1, 2))], [np.array([7.0, 2.0])])
        # online argmax is action 1, valued 2.0 by the target net
        assert td_target(self._batch(False), online, target, 0.5)[0] == pytest.approx(-2.0)

    def _random_batch(self, rng: np.random.Generator, size: int = 64, n: int = 10, k: int = 3) -> TransitionBatch:
        """States repeat, as they do on a fitness grid."""
        return TransitionBatch(
            states=rng.integers(0, n, size=size) / n,
            actions=rng.integers(0, k, size=size),
            rewards=rng.normal(size=size),
            next_states=rng.integers(0, n + 1, size=size) / n,
            dones=rng.random(size) < 0.2,
        )

    def test_matches_per_sample_targets(self, rng: np.random.Generator) -> None:
        online, target = Mlp.glorot([1, 6, 6, 3], rng), Mlp.glorot([1, 6, 6, 3], rng)
        batch = self._random_batch(rng)
        next_states = batch.next_states.reshape(-1, 1)
        chosen = np.argmax(online.forward(next_states), axis=1)
        bootstrap = target.forward(next_states)[np.arange(len(batch)), chosen]
        expected = batch.rewards + 0.9 * bootstrap * (~batch.dones)
        assert np.allclose(td_target(batch, online, target, 0.9), expected)

    def test_loss_gradients_match_full_batch(self, rng: np.random.Generator) -> None:
        online = Mlp.glorot([1, 6, 6, 3], rng)
        for b in online.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        batch = self._random_batch(rng)
        targets = rng.normal(size=len(batch))
        states = batch.states.reshape(-1, 1)
        q = online.forward(states)
        diff = q[np.arange(len(batch)), batch.actions] - targets
        upstream = np.zeros_like(q)
        upstream[np.arange(len(batch)), batch.actions] = 2.0 * diff / len(batch)
        expected = online.backward(states, upstream)

        loss, grads = q_loss_gradients(online, batch, targets)
        assert loss == pytest.approx(float(np.mean(diff * diff)))
        for got, want in zip(grads, expected):
            assert np.allclose(got, want, rtol=1e-10, atol=1e-10)


class TestDdqnConfig:
    """Hyperparameter validation."""

    @pytest.mark.parametrize("field,value", [("epsilon", 1.5), ("gamma", 0.0), ("tau", 0.0), ("batch_size", 0)])
    def test_rejects(self, field: str, value) -> None:
        with pytest.raises(ConfigurationError):
            _tiny_config(**{field: value})


class TestDdqnTrainer:
    """Short end-to-end training runs."""

    def test_checkpoints_recorded(self) -> None:
        seen = []
        trainer = DdqnTrainer(_tiny_config(), on_checkpoint=seen.append)
        log = trainer.run_training()
        assert [c.step for c in log.checkpoints] == [20, 40]
        assert [c.step for c in seen] == [20, 40]
        assert all(c.result is not None and len(c.result.runtimes) == 3 for c in log.checkpoints)
        assert all(c.policy.n == 8 for c in log.checkpoints)
        assert log.warmup_rewards.shape == (64,)
        assert trainer.updates_done == 40

    def test_same_seed_same_network(self) -> None:
        first = DdqnTrainer(_tiny_config(quick_eval_seeds=()))
        second = DdqnTrainer(_tiny_config(quick_eval_seeds=()))
        first.run_training()
        second.run_training()
        for a, b in zip(first.online.parameters(), second.online.parameters()):
            assert np.array_equal(a, b)

    def test_small_buffer_skips_updates(self) -> None:
        trainer = DdqnTrainer(_tiny_config(warmup_transitions=0, batch_size=64, quick_eval_seeds=()))
        trainer.run_training()
        assert trainer.updates_done == 0

    def test_target_trails_online(self) -> None:
        trainer = DdqnTrainer(_tiny_config(quick_eval_seeds=()))
        trainer.run_training()
        diffs = [np.abs(t - o).max() for t, o in zip(trainer.target.parameters(), trainer.online.parameters())]
        assert max(diffs) > 0.0

    @pytest.mark.parametrize("n", [2, 4])
    @pytest.mark.parametrize("seed", range(5))
    def test_smallest_sizes_train(self, n: int, seed: int) -> None:
        """Episodes end within a step or two at these sizes; every reset must still give a decision."""
        config = _tiny_config(env=EnvConfig(n=n), total_steps=200, checkpoint_every=100,
                              warmup_transitions=32, quick_eval_seeds=(), seed=seed)
        trainer = DdqnTrainer(config)
        log = trainer.run_training()
        assert [c.step for c in log.checkpoints] == [100, 200]
        assert trainer.updates_done == 200
        assert all(c.policy.n == n for c in log.checkpoints)

    def test_exploration_rate(self) -> None:
        """Non-greedy actions occur at rate epsilon * (k - 1) / k."""
        trainer = DdqnTrainer(_tiny_config(epsilon=0.3, quick_eval_seeds=()))
        greedy = trainer.greedy_action(3)
        draws = 20_000
        off_policy = sum(trainer.behaviour_action(3) != greedy for _ in range(draws))
        k = trainer.env.portfolio.k
        expected = 0.3 * (k - 1) / k
        tolerance = 5 * np.sqrt(expected * (1 - expected) / draws)
        assert abs(off_policy / draws - expected) < tolerance


# =============================================================================
# Reward-shift oracle
# =============================================================================


class TestShiftOracle:
    """Constant reward shifts move Q* by b / (1 - gamma) and keep the greedy policy."""

    @pytest.mark.parametrize("gamma", [0.5, 0.9, 0.99])
    @pytest.mark.parametrize("shift", [-5.0, -1.0, 0.0, 3.0])
    def test_identity(self, gamma: float, shift: float) -> None:
        report = tabular_shift_oracle(gamma, shift)
        assert report.passed
        assert report.expected_offset == pytest.approx(shift / (1 - gamma))

    def test_undiscounted_rejected(self) -> None:
        with pytest.raises(ConfigurationError):
            tabular_shift_oracle(1.0, 1.0)


# =============================================================================
# Desk-scale training
# =============================================================================


@functools.lru_cache(maxsize=None)
def _desk_run(reward_name: str, gamma: float, n: int, seed: int):
    """200k DDQN steps; returns the log and the best checkpoint's ERT/n on 500 final seeds."""
    env = EnvConfig(n=n)
    quick = tuple(derive_seed_list(seed, 0, "quick_eval", 50))
    config = DdqnConfig(env=env, reward=RewardSpec.parse(reward_name), gamma=gamma, total_steps=200_000,
                        quick_eval_seeds=quick, eval_workers=4, seed=seed)
    log = DdqnTrainer(config).run_training()
    final = derive_seed_list(seed, 0, "final_eval", 500)
    _, result = best_policy_selection(log.candidates(), env, final, quick, top_k=5, workers=4)
    return log, result.mean_ert_over_n


@pytest.mark.slow
class TestDeskScaleTraining:
    """Scaled-down training runs with directional expectations."""

    def test_adaptive_shift_reaches_theory_level_at_n50(self) -> None:
        disc = evaluate(DiscreteTheoryPolicy(50), EnvConfig(n=50), derive_seed_list(0, 0, "final_eval", 500), 4)
        assert disc.mean_ert_over_n == pytest.approx(5.48, abs=0.2)
        reached = [_desk_run("shifted_adaptive", 0.99, 50, seed)[1] <= 5.48 for seed in range(3)]
        assert sum(reached) >= 2

    def test_naive_reward_stagnates_at_lambda_one(self) -> None:
        log, _ = _desk_run("naive", 0.99, 100, 0)
        tail = log.checkpoints[-len(log.checkpoints) // 4:]
        stuck = [np.mean(np.asarray(c.policy.lambdas) == 1) > 0.5 for c in tail]
        assert sum(stuck) > len(tail) / 2

    def test_undiscounted_naive_beats_discounted(self) -> None:
        undiscounted = np.mean([_desk_run("naive", 1.0, 100, seed)[1] for seed in range(3)])
        discounted = np.mean([_desk_run("naive", 0.99, 100, seed)[1] for seed in range(3)])
        assert undiscounted < discounted
