"""
Double DQN for choosing lambda, plus a tabular check of the reward-shifting identity.

The network sees the normalized fitness f/n and outputs one Q value per portfolio
entry. One gradient step is taken per environment step after warm-up; the target
network follows the online network through soft updates.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from oll_dac.checkpoints import CheckpointEvaluator, CheckpointRecord, TrainingLog, summarize_losses
from oll_dac.errors import ConfigurationError, TrainingDivergedError, UsageError
from oll_dac.neural import AdamState, Mlp, adam_step, default_sizes, soft_update
from oll_dac.onemax_env import EnvConfig, OneMaxDacEnv
from oll_dac.policy import extract_greedy, pairwise_difference
from oll_dac.reward import RewardSpec, RewardStats, adaptive_bias, collect_reward_stats, reward
from oll_dac.seeding import split_rngs

logger = logging.getLogger(__name__)

GAMMA_GRID = (0.9, 0.99, 0.995, 0.9998, 1.0)


@dataclass(frozen=True)
class Transition:
    state: float
    action: int
    reward: float
    next_state: float
    done: bool


@dataclass(frozen=True)
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return int(self.actions.shape[0])


class ReplayBuffer:
    def __init__(self, capacity: int = 1_000_000):
        if capacity < 1:
            raise ConfigurationError(f"Replay capacity must be positive, got {capacity}.")
        self.capacity = int(capacity)
        self._states = np.zeros(self.capacity, dtype=np.float64)
        self._actions = np.zeros(self.capacity, dtype=np.int64)
        self._rewards = np.zeros(self.capacity, dtype=np.float64)
        self._next_states = np.zeros(self.capacity, dtype=np.float64)
        self._dones = np.zeros(self.capacity, dtype=bool)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, transition: Transition) -> None:
        i = self._cursor
        self._states[i] = transition.state
        self._actions[i] = transition.action
        self._rewards[i] = transition.reward
        self._next_states[i] = transition.next_state
        self._dones[i] = transition.done
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self._size == 0:
            raise UsageError("Cannot sample from an empty replay buffer.")
        return rng.integers(0, self._size, size=batch_size)

    def gather(self, indices: np.ndarray) -> TransitionBatch:
        return TransitionBatch(
            states=self._states[indices],
            actions=self._actions[indices],
            rewards=self._rewards[indices],
            next_states=self._next_states[indices],
            dones=self._dones[indices],
        )

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        return self.gather(self.sample_indices(batch_size, rng))

    def rewards(self) -> np.ndarray:
        return self._rewards[: self._size].copy()


@dataclass
class DdqnConfig:
    env: EnvConfig
    reward: RewardSpec = field(default_factory=RewardSpec.naive)
    epsilon: float = 0.2
    gamma: float = 0.99
    tau: float = 0.01
    batch_size: int = 2048
    learning_rate: float = 0.001
    buffer_capacity: int = 1_000_000
    warmup_transitions: int = 10_000
    total_steps: int = 500_000
    checkpoint_every: int = 2000
    hidden_units: int = 50
    bootstrap_on_truncation: bool = True
    quick_eval_seeds: tuple[int, ...] = ()
    eval_workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigurationError(f"epsilon must be in [0, 1], got {self.epsilon}.")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must be in (0, 1], got {self.gamma}.")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigurationError(f"tau must be in (0, 1], got {self.tau}.")
        if self.batch_size < 1 or self.checkpoint_every < 1 or self.total_steps < 0:
            raise ConfigurationError("batch_size and checkpoint_every must be positive, total_steps non-negative.")


@dataclass(frozen=True)
class WarmupResult:
    stats: Optional[RewardStats]
    reward_spec: RewardSpec
    naive_rewards: np.ndarray


def _is_done(terminated: bool, truncated: bool, bootstrap_on_truncation: bool) -> bool:
    return bool(terminated or (truncated and not bootstrap_on_truncation))


def warmup(
    env: OneMaxDacEnv,
    buffer: ReplayBuffer,
    rng: np.random.Generator,
    n_transitions: int,
    reward_spec: RewardSpec,
    bootstrap_on_truncation: bool = True,
) -> WarmupResult:
    """
    Fill the buffer with uniform-random-action transitions. Naive-reward statistics
    of the sample resolve an adaptive bias before any transition is stored.
    """
    if len(buffer):
        raise UsageError("Warm-up expects an empty replay buffer.")
    n = env.config.n
    raw = []
    for _ in range(n_transitions):
        if env.state is None or env.state.at_optimum:
            env.reset()
        state = env.fitness / n
        action = int(rng.integers(env.portfolio.k))
        _, _, terminated, truncated, info = env.step(action)
        raw.append((state, action, info["delta_f"], info["step_evals"], env.fitness / n,
                    _is_done(terminated, truncated, bootstrap_on_truncation)))
        if terminated or truncated:
            env.reset()

    naive = np.array([float(df - ev) for _, _, df, ev, _, _ in raw])
    stats = collect_reward_stats(naive) if raw else None
    spec = reward_spec
    if spec.needs_resolution:
        if stats is None:
            raise UsageError("Adaptive reward shifting needs a non-empty warm-up.")
        spec = spec.with_resolved_bias(adaptive_bias(stats))
    for state, action, delta_f, step_evals, next_state, done in raw:
        buffer.add(Transition(state, action, reward(spec, delta_f, step_evals, n), next_state, done))
    logger.info(
        "Warm-up stored %d transitions; mean naive reward %.3f, bias %s",
        len(buffer),
        stats.mean if stats else float("nan"),
        spec.effective_bias,
    )
    return WarmupResult(stats=stats, reward_spec=spec, naive_rewards=naive)


def td_target(batch: TransitionBatch, online: Mlp, target: Mlp, gamma: float) -> np.ndarray:
    """Double-Q target: the online net picks the next action, the target net values it."""
    if len(batch) == 0:
        raise UsageError("TD target of an empty batch.")
    # States are f/n, so a batch holds at most n + 1 distinct inputs.
    unique_next, inverse = np.unique(batch.next_states, return_inverse=True)
    unique_next = unique_next.reshape(-1, 1)
    best_next = np.argmax(online.forward(unique_next), axis=1)[inverse]
    next_values = target.forward(unique_next)[inverse, best_next]
    return batch.rewards + gamma * next_values * (~batch.dones)


def q_loss_gradients(online: Mlp, batch: TransitionBatch, targets: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean squared TD error over the batch and its gradient, computed over distinct states only."""
    unique_states, inverse = np.unique(batch.states, return_inverse=True)
    unique_states = unique_states.reshape(-1, 1)
    trace = online.forward_trace(unique_states)
    diff = trace.output[inverse, batch.actions] - targets
    # Per-sample gradients summed onto the distinct (state, action) outputs.
    upstream = np.zeros_like(trace.output)
    np.add.at(upstream, (inverse, batch.actions), 2.0 * diff / len(batch))
    return float(np.mean(diff * diff)), online.backward(unique_states, upstream, trace)


class DdqnTrainer:
    def __init__(
        self,
        config: DdqnConfig,
        on_checkpoint: Optional[Callable[[CheckpointRecord], None]] = None,
    ):
        self.config = config
        init_rng, self.rng, env_rng = split_rngs(config.seed, 3)
        self.env = OneMaxDacEnv(config.env)
        self.env.reset(seed=int(env_rng.integers(2**63)))
        self.n = config.env.n
        k = self.env.portfolio.k
        sizes = default_sizes(1, k, config.hidden_units)
        self.online = Mlp.glorot(sizes, init_rng)
        self.target = self.online.copy()
        self.optimizer = AdamState.for_net(self.online, config.learning_rate)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.reward_spec = config.reward
        self.steps_done = 0
        self.updates_done = 0
        self._on_checkpoint = on_checkpoint

    def greedy_action(self, fitness: int) -> int:
        q = self.online.forward(np.array([[fitness / self.n]]))
        return int(np.argmax(q[0]))

    def behaviour_action(self, fitness: int) -> int:
        if self.rng.random() < self.config.epsilon:
            return int(self.rng.integers(self.env.portfolio.k))
        return self.greedy_action(fitness)

    def train_step(self) -> Optional[float]:
        cfg = self.config
        if len(self.buffer) < cfg.batch_size:
            logger.debug("Replay buffer holds %d < %d transitions; skipping update.", len(self.buffer), cfg.batch_size)
            return None
        batch = self.buffer.sample(cfg.batch_size, self.rng)
        targets = td_target(batch, self.online, self.target, cfg.gamma)
        loss, grads = q_loss_gradients(self.online, batch, targets)
        adam_step(self.online, grads, self.optimizer)
        soft_update(self.target, self.online, cfg.tau)
        self.updates_done += 1

        if not np.isfinite(loss) or not self.online.all_finite():
            raise TrainingDivergedError(
                f"DDQN diverged at step {self.steps_done}.",
                {"step": self.steps_done, "update": self.updates_done, "loss": loss,
                 "finite_parameters": self.online.all_finite()},
            )
        return loss

    def env_step(self) -> None:
        env = self.env
        fitness = env.fitness
        action = self.behaviour_action(fitness)
        _, _, terminated, truncated, info = env.step(action)
        value = reward(self.reward_spec, info["delta_f"], info["step_evals"], self.n)
        self.buffer.add(Transition(
            fitness / self.n, action, value, env.fitness / self.n,
            _is_done(terminated, truncated, self.config.bootstrap_on_truncation),
        ))
        if terminated or truncated:
            env.reset()
        self.steps_done += 1

    def run_training(self) -> TrainingLog:
        cfg = self.config
        warm = warmup(self.env, self.buffer, self.rng, cfg.warmup_transitions, cfg.reward,
                      cfg.bootstrap_on_truncation)
        self.reward_spec = warm.reward_spec
        log = TrainingLog("ddqn", self.reward_spec, warmup_stats=warm.stats, warmup_rewards=warm.naive_rewards)
        evaluator = CheckpointEvaluator(cfg.env, cfg.quick_eval_seeds, cfg.eval_workers, self._on_checkpoint)
        previous = extract_greedy(self.online, self.n)
        losses: list[float] = []
        try:
            for _ in range(cfg.total_steps):
                self.env_step()
                loss = self.train_step()
                if loss is not None:
                    losses.append(loss)
                if self.steps_done % cfg.checkpoint_every == 0:
                    policy = extract_greedy(self.online, self.n)
                    loss_mean, loss_std = summarize_losses(losses)
                    record = CheckpointRecord(
                        self.steps_done, policy, pairwise_difference(policy, previous), loss_mean, loss_std
                    )
                    log.checkpoints.append(record)
                    evaluator.submit(record)
                    previous = policy
                    losses = []
        except TrainingDivergedError as exc:
            log.diverged = exc.diagnostic
            logger.error("Training aborted: %s", exc)
            raise
        finally:
            evaluator.close()
        return log


@dataclass(frozen=True)
class ShiftOracleReport:
    gamma: float
    shift: float
    q: np.ndarray
    q_shifted: np.ndarray
    expected_offset: float
    max_offset_error: float
    same_greedy_policy: bool

    @property
    def passed(self) -> bool:
        return self.max_offset_error < 1e-8 * max(1.0, abs(self.expected_offset)) and self.same_greedy_policy

    def as_row(self) -> dict:
        return {
            "shift": self.shift,
            "expected_offset": self.expected_offset,
            "max_offset_error": self.max_offset_error,
            "same_greedy_policy": self.same_greedy_policy,
        }


# Deterministic continuing MDP with 4 states and 2 actions.
ORACLE_NEXT_STATE = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
ORACLE_REWARD = np.array([[0.0, -1.0], [0.5, -0.5], [1.0, 2.0], [-1.0, 3.0]])


def value_iteration(rewards: np.ndarray, next_state: np.ndarray, gamma: float,
                    tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    q = np.zeros_like(rewards, dtype=np.float64)
    for _ in range(max_iter):
        updated = rewards + gamma * q.max(axis=1)[next_state]
        if np.max(np.abs(updated - q)) < tol:
            return updated
        q = updated
    return q


def tabular_shift_oracle(gamma: float, shift_b: float) -> ShiftOracleReport:
    """Q* under R + b should equal Q* under R plus b/(1-gamma), with the same argmax."""
    if not 0.0 < gamma < 1.0:
        raise ConfigurationError(f"The shift identity needs 0 < gamma < 1, got {gamma}.")
    q = value_iteration(ORACLE_REWARD, ORACLE_NEXT_STATE, gamma)
    q_shifted = value_iteration(ORACLE_REWARD + shift_b, ORACLE_NEXT_STATE, gamma)
    offset = shift_b / (1.0 - gamma)
    return ShiftOracleReport(
        gamma=gamma,
        shift=shift_b,
        q=q,
        q_shifted=q_shifted,
        expected_offset=offset,
        max_offset_error=float(np.max(np.abs(q_shifted - q - offset))),
        same_greedy_policy=bool(np.array_equal(q.argmax(axis=1), q_shifted.argmax(axis=1))),
    )
