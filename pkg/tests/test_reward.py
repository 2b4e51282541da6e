"""Tests for reward variants and the adaptive shifting bias."""

import numpy as np
import pytest

from oll_dac.errors import ConfigurationError, DegenerateStatisticsError, UsageError
from oll_dac.reward import (
    ADAPTIVE_BIAS_COEFFICIENT,
    RewardSpec,
    RewardStats,
    RewardVariant,
    adaptive_bias,
    collect_reward_stats,
    reward,
)


class TestRewardVariants:
    """Values of each reward design for one step."""

    def test_naive(self) -> None:
        assert reward(RewardSpec.naive(), 2, 5, 50) == -3.0

    def test_scaled(self) -> None:
        assert reward(RewardSpec.parse("scaled"), 2, 5, 50) == pytest.approx(-0.06)

    def test_shifted_fixed(self) -> None:
        assert reward(RewardSpec.parse("shifted_fixed", 3), 0, 4, 50) == -1.0

    def test_shifted_adaptive_after_resolution(self) -> None:
        spec = RewardSpec.parse("shifted_adaptive").with_resolved_bias(0.25)
        assert reward(spec, 1, 2, 50) == pytest.approx(-0.75)
        assert spec.effective_bias == 0.25

    def test_scaled_shifted_adaptive(self) -> None:
        spec = RewardSpec.parse("scaled_shifted_adaptive").with_resolved_bias(0.1)
        assert reward(spec, 0, 10, 100) == pytest.approx(0.0)

    def test_unresolved_adaptive_raises(self) -> None:
        with pytest.raises(UsageError):
            reward(RewardSpec.parse("shifted_adaptive"), 1, 2, 10)

    def test_invalid_accounting(self) -> None:
        with pytest.raises(ValueError):
            reward(RewardSpec.naive(), 1, 0, 10)
        with pytest.raises(ValueError):
            reward(RewardSpec.naive(), -1, 3, 10)


class TestRewardSpec:
    """Parsing and bias bookkeeping."""

    def test_parse_is_case_insensitive(self) -> None:
        assert RewardSpec.parse(" Scaled ").variant is RewardVariant.SCALED

    def test_unknown_variant(self) -> None:
        with pytest.raises(ConfigurationError):
            RewardSpec.parse("potential")

    def test_resolution_only_for_adaptive(self) -> None:
        with pytest.raises(UsageError):
            RewardSpec.naive().with_resolved_bias(1.0)

    def test_needs_resolution(self) -> None:
        spec = RewardSpec.parse("shifted_adaptive")
        assert spec.needs_resolution
        assert not spec.with_resolved_bias(0.0).needs_resolution
        assert not RewardSpec.parse("shifted_fixed", 2).needs_resolution
        assert RewardSpec.naive().effective_bias is None


class TestAdaptiveBias:
    """Warm-up statistics and the derived bias."""

    def test_quartiles_interpolate_linearly(self) -> None:
        stats = collect_reward_stats([1.0, 2.0, 3.0, 4.0])
        assert stats.mean == 2.5
        assert stats.q1 == 1.75
        assert stats.q3 == 3.25
        assert stats.count == 4

    def test_matches_numpy_percentiles(self, rng: np.random.Generator) -> None:
        sample = rng.normal(-5.0, 2.0, size=501)
        stats = collect_reward_stats(sample)
        assert stats.q1 == pytest.approx(np.percentile(sample, 25))
        assert stats.q3 == pytest.approx(np.percentile(sample, 75))

    def test_bias_formula(self) -> None:
        stats = RewardStats(mean=-10.0, q1=-12.0, q3=-4.0, count=100)
        assert adaptive_bias(stats) == pytest.approx(ADAPTIVE_BIAS_COEFFICIENT * -10.0 * 3.0)

    def test_zero_third_quartile(self) -> None:
        with pytest.raises(DegenerateStatisticsError):
            adaptive_bias(RewardStats(mean=-1.0, q1=-2.0, q3=0.0, count=10))

    def test_empty_sample(self) -> None:
        with pytest.raises(UsageError):
            collect_reward_stats([])
