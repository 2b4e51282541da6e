"""
PPO for choosing lambda: on-policy rollouts that cross episode boundaries, GAE,
the clipped surrogate with an optional entropy bonus, and a separate value network.

Actor and critic share the hidden architecture but not their parameters; one
Adam state covers both parameter lists and gradients are clipped jointly.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import log_softmax

from oll_dac.checkpoints import CheckpointEvaluator, CheckpointRecord, TrainingLog
from oll_dac.errors import ConfigurationError, TrainingDivergedError, UsageError
from oll_dac.metrics import run_episodes
from oll_dac.neural import AdamState, Mlp, adam_update, clip_grad_norm, default_sizes
from oll_dac.onemax_env import EnvConfig, OneMaxDacEnv
from oll_dac.policy import Policy, TabularPolicy, extract_greedy, pairwise_difference
from oll_dac.reward import RewardSpec, reward
from oll_dac.seeding import derive_seed_list, split_rngs

logger = logging.getLogger(__name__)

ADVANTAGE_STD_GUARD = 1e-8
ENTROPY_GRID = (0.0, 0.05, 0.1, 0.25, 0.5, 1.0)


@dataclass
class PpoConfig:
    env: EnvConfig
    reward: RewardSpec = field(default_factory=RewardSpec.naive)
    learning_rate: float = 0.0003
    rollout_steps: int = 2048
    minibatch_size: int = 64
    epochs: int = 10
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_range: float = 0.2
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_steps: int = 500_000
    checkpoint_every: int = 2000
    hidden_units: int = 50
    quick_eval_seeds: tuple[int, ...] = ()
    eval_workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigurationError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}.")
        if self.clip_range <= 0.0:
            raise ConfigurationError(f"clip_range must be positive, got {self.clip_range}.")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must be in (0, 1], got {self.gamma}.")
        if self.rollout_steps < 1 or self.minibatch_size < 1 or self.epochs < 1:
            raise ConfigurationError("rollout_steps, minibatch_size and epochs must be positive.")

    @classmethod
    def tuned(cls, env: EnvConfig, reward_spec: Optional[RewardSpec] = None, **overrides) -> "PpoConfig":
        """Hyperparameters found by a sweep over lr, minibatch, epochs, entropy, GAE, clip and gamma."""
        base = cls(
            env=env,
            reward=reward_spec or RewardSpec.naive(),
            learning_rate=0.00001,
            minibatch_size=128,
            epochs=10,
            entropy_coef=0.115,
            gae_lambda=0.705,
            clip_range=0.442,
            gamma=0.986,
        )
        return replace(base, **overrides)


class RolloutBuffer:
    def __init__(self, size: int = 2048):
        self.size = int(size)
        self.states = np.zeros(self.size, dtype=np.float64)
        self.actions = np.zeros(self.size, dtype=np.int64)
        self.log_probs = np.zeros(self.size, dtype=np.float64)
        self.rewards = np.zeros(self.size, dtype=np.float64)
        self.values = np.zeros(self.size, dtype=np.float64)
        self.dones = np.zeros(self.size, dtype=bool)
        self.truncated = np.zeros(self.size, dtype=bool)
        # V(s_{t+1}) of the state that ended a truncated episode
        self.truncation_values = np.zeros(self.size, dtype=np.float64)
        self.bootstrap_value = 0.0
        self.pos = 0

    @property
    def full(self) -> bool:
        return self.pos == self.size

    def add(self, state, action, log_prob, reward_value, value, done, truncated=False, truncation_value=0.0):
        if self.full:
            raise UsageError("Rollout buffer is full; run an update first.")
        i = self.pos
        self.states[i] = state
        self.actions[i] = action
        self.log_probs[i] = log_prob
        self.rewards[i] = reward_value
        self.values[i] = value
        self.dones[i] = done
        self.truncated[i] = truncated
        self.truncation_values[i] = truncation_value
        self.pos += 1

    def clear(self) -> None:
        self.pos = 0
        self.bootstrap_value = 0.0
        self.truncated[:] = False
        self.dones[:] = False


def compute_gae(buffer: RolloutBuffer, gamma: float, gae_lambda: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Backward GAE recursion. Terminal steps do not bootstrap; truncated steps bootstrap
    from their stored V(s_{t+1}); both cut the recursion at the episode boundary.
    """
    if not buffer.full:
        raise UsageError("GAE needs a full rollout buffer.")
    size = buffer.size
    advantages = np.zeros(size, dtype=np.float64)
    running = 0.0
    for t in range(size - 1, -1, -1):
        if buffer.truncated[t]:
            next_value = buffer.truncation_values[t]
        elif t == size - 1:
            next_value = buffer.bootstrap_value
        else:
            next_value = buffer.values[t + 1]
        nonterminal = 0.0 if buffer.dones[t] else 1.0
        delta = buffer.rewards[t] + gamma * next_value * nonterminal - buffer.values[t]
        continues = 0.0 if (buffer.dones[t] or buffer.truncated[t]) else 1.0
        running = delta + gamma * gae_lambda * continues * running
        advantages[t] = running
    return advantages, advantages + buffer.values


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    std = advantages.std()
    return (advantages - advantages.mean()) / max(std, ADVANTAGE_STD_GUARD)


def clipped_surrogate(ratio: np.ndarray, advantages: np.ndarray, clip_range: float) -> np.ndarray:
    clipped = np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range)
    return np.minimum(ratio * advantages, clipped * advantages)


def categorical_entropy(logits: np.ndarray) -> np.ndarray:
    log_p = log_softmax(logits, axis=-1)
    return -(np.exp(log_p) * log_p).sum(axis=-1)


class ActorCritic:
    def __init__(self, k: int, rng: np.random.Generator, hidden_units: int = 50, learning_rate: float = 0.0003):
        self.k = k
        self.actor = Mlp.glorot(default_sizes(1, k, hidden_units), rng)
        self.critic = Mlp.glorot(default_sizes(1, 1, hidden_units), rng)
        self.optimizer = AdamState.for_parameters(self.parameters(), learning_rate)

    def parameters(self) -> list[np.ndarray]:
        return self.actor.parameters() + self.critic.parameters()

    def all_finite(self) -> bool:
        return self.actor.all_finite() and self.critic.all_finite()

    def probabilities(self, states: np.ndarray) -> np.ndarray:
        return np.exp(log_softmax(self.actor.forward(states), axis=-1))

    def value(self, state: float) -> float:
        return float(self.critic.forward(np.array([[state]]))[0, 0])

    def act(self, state: float, rng: np.random.Generator) -> tuple[int, float, float]:
        log_p = log_softmax(self.actor.forward(np.array([[state]]))[0])
        action = int(rng.choice(self.k, p=np.exp(log_p)))
        return action, float(log_p[action]), self.value(state)

    def greedy_policy(self, n: int) -> TabularPolicy:
        return extract_greedy(self.actor, n)


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    grad_norm: float

    @property
    def total_loss(self) -> float:
        return self.policy_loss + self.value_loss


def ppo_update(
    model: ActorCritic,
    buffer: RolloutBuffer,
    config: PpoConfig,
    rng: np.random.Generator,
) -> UpdateStats:
    advantages, returns = compute_gae(buffer, config.gamma, config.gae_lambda)
    advantages = normalize_advantages(advantages)
    states = buffer.states.reshape(-1, 1)
    size = buffer.size
    history = {key: [] for key in ("policy", "value", "entropy", "clip", "kl", "norm")}

    for _ in range(config.epochs):
        order = rng.permutation(size)
        for start in range(0, size, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            batch = len(idx)
            s, a, adv, ret = states[idx], buffer.actions[idx], advantages[idx], returns[idx]
            rows = np.arange(batch)

            actor_trace = model.actor.forward_trace(s)
            critic_trace = model.critic.forward_trace(s)
            log_p = log_softmax(actor_trace.output, axis=-1)
            probs = np.exp(log_p)
            ratio = np.exp(log_p[rows, a] - buffer.log_probs[idx])
            unclipped = ratio * adv
            surrogate = clipped_surrogate(ratio, adv, config.clip_range)
            entropy = -(probs * log_p).sum(axis=-1)

            # d(-mean surrogate)/d log pi(a|s); zero where the clipped branch is active
            active = unclipped <= surrogate
            d_logp = -(unclipped * active) / batch
            one_hot = np.zeros_like(probs)
            one_hot[rows, a] = 1.0
            g_logits = d_logp[:, None] * (one_hot - probs)
            g_logits += (config.entropy_coef / batch) * probs * (log_p + entropy[:, None])

            values = critic_trace.output[:, 0]
            g_values = (config.value_coef * 2.0 * (values - ret) / batch)[:, None]

            grads = model.actor.backward(s, g_logits, actor_trace) + model.critic.backward(s, g_values, critic_trace)
            grads, norm = clip_grad_norm(grads, config.max_grad_norm)
            adam_update(model.parameters(), grads, model.optimizer)

            policy_loss = float(-surrogate.mean())
            value_loss = float(np.mean((values - ret) ** 2))
            if not (np.isfinite(policy_loss) and np.isfinite(value_loss) and model.all_finite()):
                raise TrainingDivergedError(
                    "PPO update produced non-finite values.",
                    {"policy_loss": policy_loss, "value_loss": value_loss, "grad_norm": norm},
                )
            history["policy"].append(policy_loss)
            history["value"].append(value_loss)
            history["entropy"].append(float(entropy.mean()))
            history["clip"].append(float(np.mean(np.abs(ratio - 1.0) > config.clip_range)))
            history["kl"].append(float(np.mean((ratio - 1.0) - np.log(ratio))))
            history["norm"].append(norm)

    return UpdateStats(
        policy_loss=float(np.mean(history["policy"])),
        value_loss=config.value_coef * float(np.mean(history["value"])),
        entropy=float(np.mean(history["entropy"])),
        clip_fraction=float(np.mean(history["clip"])),
        approx_kl=float(np.mean(history["kl"])),
        grad_norm=float(np.mean(history["norm"])),
    )


class PpoTrainer:
    def __init__(
        self,
        config: PpoConfig,
        on_checkpoint: Optional[Callable[[CheckpointRecord], None]] = None,
    ):
        if config.reward.needs_resolution:
            raise UsageError("PPO has no warm-up; resolve an adaptive reward bias before training.")
        self.config = config
        init_rng, self.rng, env_rng = split_rngs(config.seed, 3)
        self.env = OneMaxDacEnv(config.env)
        self.env.reset(seed=int(env_rng.integers(2**63)))
        self.n = config.env.n
        self.model = ActorCritic(self.env.portfolio.k, init_rng, config.hidden_units, config.learning_rate)
        self.buffer = RolloutBuffer(config.rollout_steps)
        self.steps_done = 0
        self._on_checkpoint = on_checkpoint

    def collect_step(self) -> None:
        env, n = self.env, self.n
        state = env.fitness / n
        action, log_prob, value = self.model.act(state, self.rng)
        _, _, terminated, truncated, info = env.step(action)
        value_r = reward(self.config.reward, info["delta_f"], info["step_evals"], n)
        truncation_value = self.model.value(env.fitness / n) if truncated else 0.0
        self.buffer.add(state, action, log_prob, value_r, value, terminated, truncated, truncation_value)
        if terminated or truncated:
            env.reset()
        self.steps_done += 1

    def run_training(self) -> TrainingLog:
        cfg = self.config
        log = TrainingLog("ppo", cfg.reward)
        evaluator = CheckpointEvaluator(cfg.env, cfg.quick_eval_seeds, cfg.eval_workers, self._on_checkpoint)
        previous = self.model.greedy_policy(self.n)
        last_loss = float("nan")
        try:
            while self.steps_done < cfg.total_steps:
                self.collect_step()
                if self.steps_done % cfg.checkpoint_every == 0:
                    policy = self.model.greedy_policy(self.n)
                    record = CheckpointRecord(self.steps_done, policy, pairwise_difference(policy, previous),
                                              last_loss, float("nan"))
                    log.checkpoints.append(record)
                    evaluator.submit(record)
                    previous = policy
                if self.buffer.full:
                    self.buffer.bootstrap_value = self.model.value(self.env.fitness / self.n)
                    stats = ppo_update(self.model, self.buffer, cfg, self.rng)
                    last_loss = stats.total_loss
                    logger.debug("PPO update at step %d: %s", self.steps_done, stats)
                    self.buffer.clear()
        except TrainingDivergedError as exc:
            exc.diagnostic.setdefault("step", self.steps_done)
            log.diverged = exc.diagnostic
            logger.error("Training aborted: %s", exc)
            raise
        finally:
            evaluator.close()
        return log


def discounted_returns_to_go(rewards: Sequence[float], gamma: float) -> np.ndarray:
    returns = np.zeros(len(rewards), dtype=np.float64)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        returns[t] = running
    return returns


def return_variances(traces: Sequence[Sequence[float]], gamma: float, group_by_length: bool = True) -> pd.DataFrame:
    """
    Per-step variance of the discounted return-to-go across trajectories.
    Grouped by episode length, or aligned at the first step (episode_length 0).
    """
    groups: dict[int, list[np.ndarray]] = {}
    for rewards in traces:
        key = len(rewards) if group_by_length else 0
        groups.setdefault(key, []).append(discounted_returns_to_go(rewards, gamma))

    rows = []
    for length in sorted(groups):
        returns = groups[length]
        horizon = max(len(r) for r in returns)
        for step in range(horizon):
            column = np.array([r[step] for r in returns if len(r) > step])
            rows.append({
                "episode_length": length,
                "step": step,
                "trajectories": int(column.shape[0]),
                "mean_return": float(column.mean()),
                "return_variance": float(column.var()),
            })
    return pd.DataFrame(rows, columns=["episode_length", "step", "trajectories", "mean_return", "return_variance"])


def variance_probe(
    policy: Policy,
    gamma: float,
    episodes: int,
    config: EnvConfig,
    seed: int = 0,
    reward_spec: Optional[RewardSpec] = None,
    group_by_length: bool = True,
    workers: int = 1,
) -> pd.DataFrame:
    if episodes < 2:
        raise UsageError("Return variances need at least two episodes.")
    spec = reward_spec or RewardSpec.naive()
    seeds = derive_seed_list(seed, 0, "variance_probe", episodes)
    traces = run_episodes(policy, config, seeds, workers, spec)
    return return_variances([t.rewards for t in traces], gamma, group_by_length)
