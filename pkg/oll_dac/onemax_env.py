"""
OneMax and the (1+(lambda,lambda))-GA, wrapped as an episodic decision process.

One decision per GA iteration: the agent picks lambda, the GA runs a full
mutation/crossover/selection iteration with p = lambda/n and c = 1/lambda.
Bitstrings are numpy bool arrays; the optimum is the all-ones string.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import gymnasium
import numpy as np

from oll_dac.errors import ConfigurationError, UsageError
from oll_dac.reward import RewardSpec, reward as shaped_reward

logger = logging.getLogger(__name__)

CUTOFF_FACTOR = 0.8


@dataclass(frozen=True)
class EnvConfig:
    n: int
    cutoff_evals: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if int(self.n) < 1:
            raise ConfigurationError(f"Problem size must be positive, got n={self.n}.")
        if self.cutoff_evals is None:
            object.__setattr__(self, "cutoff_evals", int(math.floor(CUTOFF_FACTOR * self.n * self.n)))
        if self.cutoff_evals < self.n:
            raise ConfigurationError(
                f"cutoff_evals={self.cutoff_evals} is below n={self.n}; no policy could finish."
            )


@dataclass(frozen=True)
class Portfolio:
    lambdas: tuple[int, ...]

    @classmethod
    def for_size(cls, n: int) -> "Portfolio":
        values = []
        lam = 1
        while lam <= n:
            values.append(lam)
            lam *= 2
        return cls(tuple(values))

    @property
    def k(self) -> int:
        return len(self.lambdas)

    def value(self, index: int) -> int:
        if not 0 <= index < self.k:
            raise UsageError(f"Portfolio index {index} out of range for k={self.k}.")
        return self.lambdas[index]

    def index_of(self, lam: int) -> int:
        try:
            return self.lambdas.index(int(lam))
        except ValueError:
            raise ConfigurationError(f"lambda={lam} is not in the portfolio {list(self.lambdas)}.") from None


@dataclass
class GaState:
    x: np.ndarray
    fitness: int
    evals: int = 0
    iteration: int = 0

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def at_optimum(self) -> bool:
        return self.fitness == self.n


@dataclass(frozen=True)
class StepOutcome:
    next_fitness: int
    delta_f: int
    step_evals: int
    terminated: bool
    truncated: bool
    lam: int = field(default=1)


def one_max(x: np.ndarray) -> int:
    return int(np.count_nonzero(x))


def round_half_up(lam: float) -> int:
    # floor(lam + 0.5) is the half-up rule for non-negative values
    return max(1, int(math.floor(lam + 0.5)))


def sample_bin_gt0(n: int, p: float, rng: np.random.Generator) -> int:
    """Binomial(n, p) conditioned on being positive, by rejection."""
    if not 0.0 < p <= 1.0:
        raise ConfigurationError(f"Mutation probability must be in (0, 1], got p={p}.")
    while True:
        ell = int(rng.binomial(n, p))
        if ell > 0:
            return ell


def flip_bits(x: np.ndarray, ell: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    if not 1 <= ell <= n:
        raise ValueError(f"Cannot flip {ell} bits of a length-{n} string.")
    positions = rng.choice(n, size=ell, replace=False)
    child = x.copy()
    child[positions] = ~child[positions]
    return child


def crossover(x: np.ndarray, xp: np.ndarray, c: float, rng: np.random.Generator) -> np.ndarray:
    if x.shape != xp.shape:
        raise ValueError(f"Crossover parents differ in length: {x.shape[0]} vs {xp.shape[0]}.")
    if not 0.0 < c <= 1.0:
        raise ConfigurationError(f"Crossover bias must be in (0, 1], got c={c}.")
    take = rng.random(x.shape[0]) < c
    return np.where(take, xp, x)


def _uniform_argmax(values: np.ndarray, rng: np.random.Generator) -> int:
    best = np.flatnonzero(values == values.max())
    if best.shape[0] == 1:
        return int(best[0])
    return int(rng.choice(best))


def reset_state(config: EnvConfig, rng: np.random.Generator) -> GaState:
    # The initial evaluation is not charged to the run.
    x = rng.integers(0, 2, size=config.n).astype(bool)
    return GaState(x=x, fitness=one_max(x), evals=0, iteration=0)


def ga_step(
    state: GaState,
    lam: float,
    rng: np.random.Generator,
    cutoff_evals: Optional[int] = None,
) -> StepOutcome:
    """
    One iteration of the (1+(lambda,lambda))-GA, updating `state` in place.

    Crossover offspring equal to x or x' reuse the known fitness and cost nothing,
    but still take part in crossover selection. Truncation is checked after the
    iteration completes.
    """
    if state.at_optimum:
        raise UsageError("Cannot step a GA run that already reached the optimum.")
    if lam < 0.5:
        raise ConfigurationError(f"lambda must be at least 0.5, got {lam}.")
    n = state.n
    lam_int = round_half_up(lam)
    if lam_int > n:
        raise ConfigurationError(f"lambda={lam_int} exceeds the problem size n={n}.")

    x, f_x = state.x, state.fitness
    p = lam_int / n
    c = 1.0 / lam_int

    ell = sample_bin_gt0(n, p, rng)
    mutants = [flip_bits(x, ell, rng) for _ in range(lam_int)]
    mutant_fitness = np.fromiter((one_max(m) for m in mutants), dtype=np.int64, count=lam_int)
    step_evals = lam_int
    winner = _uniform_argmax(mutant_fitness, rng)
    xp, f_xp = mutants[winner], int(mutant_fitness[winner])

    offspring = []
    offspring_fitness = np.empty(lam_int, dtype=np.int64)
    for i in range(lam_int):
        y = crossover(x, xp, c, rng)
        if np.array_equal(y, x):
            offspring_fitness[i] = f_x
        elif np.array_equal(y, xp):
            offspring_fitness[i] = f_xp
        else:
            offspring_fitness[i] = one_max(y)
            step_evals += 1
        offspring.append(y)
    best = _uniform_argmax(offspring_fitness, rng)

    if offspring_fitness[best] > f_xp:
        y, f_y = offspring[best], int(offspring_fitness[best])
    else:
        y, f_y = xp, f_xp
    if f_y >= f_x:
        state.x = y
        state.fitness = f_y

    state.evals += step_evals
    state.iteration += 1
    terminated = state.at_optimum
    truncated = (not terminated) and cutoff_evals is not None and state.evals >= cutoff_evals
    return StepOutcome(
        next_fitness=state.fitness,
        delta_f=state.fitness - f_x,
        step_evals=step_evals,
        terminated=terminated,
        truncated=truncated,
        lam=lam_int,
    )


class OneMaxDacEnv(gymnasium.Env):
    """
    Gymnasium view of a GA run: observation is fitness/n, action is a portfolio index.

    `step_lambda` accepts an arbitrary real lambda (rounded half up) for policies
    that are not restricted to the portfolio.
    """

    metadata = {"render_modes": []}

    def __init__(self, config: EnvConfig, reward_spec: Optional[RewardSpec] = None):
        self.config = config
        self.reward_spec = reward_spec or RewardSpec.naive()
        self.portfolio = Portfolio.for_size(config.n)
        self.observation_space = gymnasium.spaces.Box(low=0.0, high=1.0, shape=(1,), dtype=np.float64)
        self.action_space = gymnasium.spaces.Discrete(self.portfolio.k)
        self.state: Optional[GaState] = None
        self._finished = True

    @property
    def fitness(self) -> int:
        if self.state is None:
            raise UsageError("Environment has not been reset.")
        return self.state.fitness

    def observe(self) -> np.ndarray:
        return np.array([self.fitness / self.config.n], dtype=np.float64)

    def reset(self, *, seed: Optional[int] = None, options: Optional[dict] = None):
        if seed is None and self._np_random is None:
            seed = self.config.seed
        super().reset(seed=seed)
        self.state = reset_state(self.config, self.np_random)
        # An episode needs at least one decision.
        while self.state.at_optimum:
            logger.debug("Initial solution is optimal at n=%d; resampling.", self.config.n)
            self.state = reset_state(self.config, self.np_random)
        self._finished = False
        return self.observe(), {"fitness": self.state.fitness, "evals": 0}

    def step(self, action):
        return self.step_lambda(self.portfolio.value(int(action)))

    def step_lambda(self, lam: float):
        if self.state is None or self._finished:
            raise UsageError("Episode is over; call reset() before stepping.")
        outcome = ga_step(self.state, lam, self.np_random, self.config.cutoff_evals)
        self._finished = outcome.terminated or outcome.truncated
        value = shaped_reward(self.reward_spec, outcome.delta_f, outcome.step_evals, self.config.n)
        info = {
            "delta_f": outcome.delta_f,
            "step_evals": outcome.step_evals,
            "evals": self.state.evals,
            "fitness": outcome.next_fitness,
            "lambda": outcome.lam,
            "naive_reward": float(outcome.delta_f - outcome.step_evals),
        }
        return self.observe(), value, outcome.terminated, outcome.truncated, info
