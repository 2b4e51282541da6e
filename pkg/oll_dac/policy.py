"""
Parameter-control policies mapping the current fitness to lambda.

Index policies answer with a portfolio index (`act`); `lambda_value` is what the
environment runs with. The continuous theory policy is the one policy whose
lambda is not restricted to the portfolio.
"""
import logging
import math
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
import pandas as pd

from oll_dac.errors import ConfigurationError, UsageError
from oll_dac.onemax_env import Portfolio

logger = logging.getLogger(__name__)


def _check_fitness(n: int, fitness: int) -> None:
    if fitness == n:
        raise UsageError("No decision is taken at the optimum; the episode is over.")
    if not 0 <= fitness < n:
        raise UsageError(f"Fitness {fitness} out of range for n={n}.")


def pi_cont(n: int, fitness: int) -> float:
    _check_fitness(n, fitness)
    return math.sqrt(n / (n - fitness))


def pi_disc(n: int, fitness: int) -> int:
    """Index of the portfolio value closest to pi_cont; ties go to the smaller lambda."""
    target = pi_cont(n, fitness)
    lambdas = np.asarray(Portfolio.for_size(n).lambdas, dtype=np.float64)
    return int(np.argmin(np.abs(lambdas - target)))


class Policy(ABC):
    name = "policy"

    def __init__(self, n: int):
        self.n = int(n)
        self.portfolio = Portfolio.for_size(self.n)

    @abstractmethod
    def act(self, fitness: int, rng: np.random.Generator) -> int:
        """Portfolio index for this fitness."""

    def lambda_value(self, fitness: int, rng: np.random.Generator) -> float:
        return float(self.portfolio.value(self.act(fitness, rng)))

    def to_tabular(self) -> "TabularPolicy":
        rng = np.random.default_rng(0)
        return TabularPolicy(self.n, tuple(self.act(f, rng) for f in range(self.n)))


class ContinuousTheoryPolicy(Policy):
    name = "pi_cont"

    def act(self, fitness: int, rng: np.random.Generator) -> int:
        # Nearest portfolio entry; evaluation runs on lambda_value instead.
        return pi_disc(self.n, fitness)

    def lambda_value(self, fitness: int, rng: np.random.Generator) -> float:
        return pi_cont(self.n, fitness)


class DiscreteTheoryPolicy(Policy):
    name = "pi_disc"

    def act(self, fitness: int, rng: np.random.Generator) -> int:
        return pi_disc(self.n, fitness)


class ConstantPolicy(Policy):
    def __init__(self, n: int, lam: int):
        super().__init__(n)
        self.lam = int(lam)
        self._index = self.portfolio.index_of(self.lam)
        self.name = f"constant_{self.lam}"

    def act(self, fitness: int, rng: np.random.Generator) -> int:
        _check_fitness(self.n, fitness)
        return self._index


class RandomPolicy(Policy):
    name = "random"

    def act(self, fitness: int, rng: np.random.Generator) -> int:
        _check_fitness(self.n, fitness)
        return int(rng.integers(self.portfolio.k))


@dataclass(frozen=True)
class TabularPolicy(Policy):
    n: int
    actions: tuple[int, ...]
    name: str = "tabular"

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        portfolio = Portfolio.for_size(self.n)
        object.__setattr__(self, "portfolio", portfolio)
        if len(self.actions) != self.n:
            raise ConfigurationError(f"A tabular policy for n={self.n} needs {self.n} entries, got {len(self.actions)}.")
        bad = [a for a in self.actions if not 0 <= a < portfolio.k]
        if bad:
            raise ConfigurationError(f"Policy entries {bad[:5]} are not valid portfolio indices (k={portfolio.k}).")

    def act(self, fitness: int, rng: np.random.Generator = None) -> int:
        _check_fitness(self.n, fitness)
        return self.actions[fitness]

    def to_tabular(self) -> "TabularPolicy":
        return self

    @property
    def lambdas(self) -> list[int]:
        return [self.portfolio.lambdas[a] for a in self.actions]

    @classmethod
    def from_lambdas(cls, n: int, lambdas, name: str = "tabular") -> "TabularPolicy":
        portfolio = Portfolio.for_size(n)
        return cls(n, tuple(portfolio.index_of(lam) for lam in lambdas), name=name)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"fitness": np.arange(self.n), "lambda": self.lambdas})

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path: str, n: int = None) -> "TabularPolicy":
        try:
            df = pd.read_csv(path)
        except Exception as exc:
            raise ConfigurationError(f"Failed to read policy file {path}: {exc}") from exc
        df.columns = [str(c).strip().lower() for c in df.columns]
        if not {"fitness", "lambda"} <= set(df.columns):
            raise ConfigurationError(f"Policy file {path} needs a 'fitness,lambda' header.")
        df = df.sort_values("fitness")
        size = int(n) if n is not None else len(df)
        if list(df["fitness"].astype(int)) != list(range(size)):
            raise ConfigurationError(f"Policy file {path} must list every fitness 0..{size - 1} exactly once.")
        name = os.path.splitext(os.path.basename(path))[0]
        return cls.from_lambdas(size, [int(v) for v in df["lambda"]], name=name)


def extract_greedy(qnet, n: int) -> TabularPolicy:
    """Argmax of the network output per fitness state; ties go to the smaller index."""
    portfolio = Portfolio.for_size(n)
    if qnet.n_inputs != 1 or qnet.n_outputs != portfolio.k:
        raise UsageError(
            f"Network maps {qnet.n_inputs} -> {qnet.n_outputs}, expected 1 -> {portfolio.k} for n={n}."
        )
    states = (np.arange(n, dtype=np.float64) / n).reshape(-1, 1)
    values = qnet.forward(states)
    return TabularPolicy(n, tuple(int(a) for a in np.argmax(values, axis=1)))


def pairwise_difference(first: TabularPolicy, second: TabularPolicy) -> int:
    if first.n != second.n:
        raise UsageError(f"Cannot compare policies for n={first.n} and n={second.n}.")
    return int(np.count_nonzero(np.asarray(first.actions) != np.asarray(second.actions)))


_BASELINE_ALIASES = {
    "pi_cont": ContinuousTheoryPolicy,
    "continuous_theory": ContinuousTheoryPolicy,
    "pi_disc": DiscreteTheoryPolicy,
    "discrete_theory": DiscreteTheoryPolicy,
    "random": RandomPolicy,
}


def make_policy(spec: str, n: int) -> Policy:
    """
    Build a policy from a name: pi_cont, pi_disc, random, constant:<lambda>,
    or a path to a tabular policy CSV.
    """
    key = str(spec).strip()
    lowered = key.lower()
    if lowered in _BASELINE_ALIASES:
        return _BASELINE_ALIASES[lowered](n)
    if lowered.startswith("constant"):
        _, _, raw = lowered.partition(":")
        try:
            return ConstantPolicy(n, int(raw or 1))
        except ValueError:
            raise ConfigurationError(f"Bad constant policy '{spec}'; use constant:<lambda>.") from None
    if os.path.exists(key):
        return TabularPolicy.from_csv(key, n)
    raise ConfigurationError(f"Unknown policy '{spec}'. Use pi_cont, pi_disc, random, constant:<lambda> or a CSV path.")
