"""
Reward designs for the OneMax DAC process and the adaptive shifting bias.

Every variant is built from the naive reward r = delta_f - E (fitness gain minus
evaluations spent in the step). The adaptive bias is estimated once from warm-up
statistics of naive rewards and then frozen.
"""
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import pandas as pd

from oll_dac.errors import ConfigurationError, DegenerateStatisticsError, UsageError

logger = logging.getLogger(__name__)

ADAPTIVE_BIAS_COEFFICIENT = 0.0052


class RewardVariant(str, Enum):
    NAIVE = "naive"
    SCALED = "scaled"
    SHIFTED_FIXED = "shifted_fixed"
    SHIFTED_ADAPTIVE = "shifted_adaptive"
    SCALED_SHIFTED_ADAPTIVE = "scaled_shifted_adaptive"

    @property
    def is_adaptive(self) -> bool:
        return self in (RewardVariant.SHIFTED_ADAPTIVE, RewardVariant.SCALED_SHIFTED_ADAPTIVE)

    @property
    def is_scaled(self) -> bool:
        return self in (RewardVariant.SCALED, RewardVariant.SCALED_SHIFTED_ADAPTIVE)


@dataclass(frozen=True)
class RewardSpec:
    variant: RewardVariant
    bias: float = 0.0
    resolved_bias: Optional[float] = None

    @classmethod
    def naive(cls) -> "RewardSpec":
        return cls(RewardVariant.NAIVE)

    @classmethod
    def parse(cls, variant: str, bias: float = 0.0) -> "RewardSpec":
        try:
            kind = RewardVariant(str(variant).strip().lower())
        except ValueError:
            choices = ", ".join(v.value for v in RewardVariant)
            raise ConfigurationError(f"Unknown reward variant '{variant}'. Use one of: {choices}.") from None
        return cls(kind, bias=float(bias))

    @property
    def needs_resolution(self) -> bool:
        return self.variant.is_adaptive and self.resolved_bias is None

    def with_resolved_bias(self, value: float) -> "RewardSpec":
        if not self.variant.is_adaptive:
            raise UsageError(f"Reward variant '{self.variant.value}' has no adaptive bias to resolve.")
        return replace(self, resolved_bias=float(value))

    @property
    def effective_bias(self) -> Optional[float]:
        if self.variant is RewardVariant.SHIFTED_FIXED:
            return self.bias
        if self.variant.is_adaptive:
            return self.resolved_bias
        return None


@dataclass(frozen=True)
class RewardStats:
    mean: float
    q1: float
    q3: float
    count: int

    def as_dict(self) -> dict:
        return {"mean": self.mean, "q1": self.q1, "q3": self.q3, "count": self.count}


def reward(spec: RewardSpec, delta_f: int, step_evals: int, n: int) -> float:
    if delta_f < 0 or step_evals < 1:
        raise ValueError(f"Invalid step accounting: delta_f={delta_f}, step_evals={step_evals}.")
    base = float(delta_f - step_evals)
    variant = spec.variant
    if variant is RewardVariant.NAIVE:
        return base
    if variant is RewardVariant.SCALED:
        return base / n
    if variant is RewardVariant.SHIFTED_FIXED:
        return base + spec.bias
    if spec.resolved_bias is None:
        raise UsageError(f"Reward variant '{variant.value}' used before its adaptive bias was resolved.")
    if variant is RewardVariant.SHIFTED_ADAPTIVE:
        return base + spec.resolved_bias
    return base / n + spec.resolved_bias


def collect_reward_stats(rewards: Sequence[float]) -> RewardStats:
    """Mean and quartiles; quartiles interpolate linearly between order statistics."""
    series = pd.Series(rewards, dtype="float64")
    if series.empty:
        raise UsageError("Cannot summarize an empty reward sample.")
    summary = series.describe(percentiles=[0.25, 0.75])
    return RewardStats(
        mean=float(summary["mean"]),
        q1=float(summary["25%"]),
        q3=float(summary["75%"]),
        count=int(summary["count"]),
    )


def adaptive_bias(stats: RewardStats) -> float:
    if stats.q3 == 0:
        raise DegenerateStatisticsError(
            f"Third quartile of warm-up rewards is zero (mean={stats.mean}, q1={stats.q1}); "
            "the warm-up sample is degenerate."
        )
    bias = ADAPTIVE_BIAS_COEFFICIENT * stats.mean * (stats.q1 / stats.q3)
    logger.debug("Adaptive bias %.6f from mean=%.4f q1=%.4f q3=%.4f", bias, stats.mean, stats.q1, stats.q3)
    return bias
