"""
Policy evaluation and the performance metrics: ERT, gap, AUC, hitting rate,
episode-length diagnostics and paired comparisons on shared seeds.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from oll_dac.errors import UsageError
from oll_dac.onemax_env import EnvConfig, OneMaxDacEnv
from oll_dac.policy import Policy, TabularPolicy
from oll_dac.reward import RewardSpec
from oll_dac.seeding import split_rngs

logger = logging.getLogger(__name__)

DEFAULT_EVAL_WORKERS = 10
HIT_BAND = 0.25
TRAINING_WINDOWS = {"0-100": (0.0, 1.0), "50-100": (0.5, 1.0), "75-100": (0.75, 1.0)}


@dataclass(frozen=True)
class EpisodeTrace:
    seed: int
    runtime: int
    success: bool
    fitness: tuple[int, ...] = ()
    lambdas: tuple[int, ...] = ()
    rewards: tuple[float, ...] = ()
    step_evals: tuple[int, ...] = ()

    @property
    def length(self) -> int:
        return len(self.fitness)


def run_episode(
    policy: Policy,
    config: EnvConfig,
    seed: int,
    reward_spec: Optional[RewardSpec] = None,
) -> EpisodeTrace:
    """One GA run under `policy`; the environment and the policy draw from separate streams."""
    env = OneMaxDacEnv(config, reward_spec)
    env.reset(seed=int(seed))
    _, policy_rng = split_rngs(seed, 2)
    fitness_trace, lambda_trace, reward_trace, evals_trace = [], [], [], []
    done = env.state.at_optimum
    while not done:
        fitness = env.fitness
        lam = policy.lambda_value(fitness, policy_rng)
        _, value, terminated, truncated, info = env.step_lambda(lam)
        fitness_trace.append(fitness)
        lambda_trace.append(info["lambda"])
        reward_trace.append(value)
        evals_trace.append(info["step_evals"])
        done = terminated or truncated
    return EpisodeTrace(
        seed=int(seed),
        runtime=min(env.state.evals, config.cutoff_evals),
        success=env.state.at_optimum,
        fitness=tuple(fitness_trace),
        lambdas=tuple(lambda_trace),
        rewards=tuple(reward_trace),
        step_evals=tuple(evals_trace),
    )


def run_episodes(
    policy: Policy,
    config: EnvConfig,
    seeds: Sequence[int],
    workers: int = 1,
    reward_spec: Optional[RewardSpec] = None,
) -> list[EpisodeTrace]:
    if workers <= 1 or len(seeds) <= 1:
        return [run_episode(policy, config, s, reward_spec) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: run_episode(policy, config, s, reward_spec), seeds))


@dataclass(frozen=True)
class EvalResult:
    n: int
    seeds: tuple[int, ...]
    runtimes: tuple[int, ...]
    successes: tuple[bool, ...]
    policy_name: str = ""

    @property
    def normalized(self) -> np.ndarray:
        return np.asarray(self.runtimes, dtype=np.float64) / self.n

    @property
    def mean_ert_over_n(self) -> float:
        return float(self.normalized.mean())

    @property
    def std_over_n(self) -> float:
        values = self.normalized
        return float(values.std(ddof=1)) if values.shape[0] > 1 else 0.0

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes))

    def as_row(self) -> dict:
        return {
            "policy": self.policy_name,
            "n": self.n,
            "episodes": len(self.runtimes),
            "mean_ert_over_n": self.mean_ert_over_n,
            "std_ert_over_n": self.std_over_n,
            "success_rate": self.success_rate,
        }


def evaluate(
    policy: Policy,
    config: EnvConfig,
    seeds: Sequence[int],
    workers: int = DEFAULT_EVAL_WORKERS,
) -> EvalResult:
    if not seeds:
        raise UsageError("Evaluation needs at least one seed.")
    traces = run_episodes(policy, config, seeds, workers)
    return EvalResult(
        n=config.n,
        seeds=tuple(int(s) for s in seeds),
        runtimes=tuple(t.runtime for t in traces),
        successes=tuple(t.success for t in traces),
        policy_name=getattr(policy, "name", type(policy).__name__),
    )


@dataclass(frozen=True)
class Candidate:
    step: int
    policy: TabularPolicy
    quick_mean: Optional[float] = None


def best_policy_selection(
    candidates: Sequence[Candidate],
    config: EnvConfig,
    final_seeds: Sequence[int],
    quick_seeds: Sequence[int] = (),
    top_k: int = 5,
    workers: int = DEFAULT_EVAL_WORKERS,
) -> tuple[Candidate, EvalResult]:
    """Rank by quick-eval mean, re-evaluate the top `top_k` on `final_seeds`, keep the best."""
    if not candidates:
        raise UsageError("Best-policy selection needs at least one checkpoint.")
    scored = []
    for cand in candidates:
        mean = cand.quick_mean
        if mean is None:
            if not quick_seeds:
                raise UsageError(f"Checkpoint at step {cand.step} has no quick-eval score and no quick seeds were given.")
            mean = evaluate(cand.policy, config, quick_seeds, workers).mean_ert_over_n
        scored.append((mean, cand.step, cand))
    scored.sort(key=lambda item: (item[0], item[1]))
    finalists = [cand for _, _, cand in scored[:top_k]]

    best: Optional[tuple[Candidate, EvalResult]] = None
    for cand in finalists:
        result = evaluate(cand.policy, config, final_seeds, workers)
        logger.debug("Finalist step=%d final ERT/n=%.4f", cand.step, result.mean_ert_over_n)
        if best is None or result.mean_ert_over_n < best[1].mean_ert_over_n:
            best = (cand, result)
    return best


def gap(policy_result: EvalResult, baseline_result: EvalResult) -> float:
    if policy_result.n != baseline_result.n:
        raise UsageError("Gap needs results for the same problem size.")
    base = baseline_result.mean_ert_over_n
    return (policy_result.mean_ert_over_n - base) / base


@dataclass(frozen=True)
class LearningCurve:
    steps: tuple[int, ...]
    values: tuple[float, ...]
    baseline: Optional[EvalResult] = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.steps) != len(self.values):
            raise UsageError("Learning curve steps and values differ in length.")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise UsageError("Learning curve steps must be strictly increasing.")

    def window(self, start: float, end: float) -> np.ndarray:
        m = len(self.values)
        lo, hi = int(round(start * m)), int(round(end * m))
        return np.asarray(self.values[lo:hi], dtype=np.float64)


def auc(curve: LearningCurve, baseline_ert_over_n: float) -> float:
    """Mean positive excess of the curve over the baseline, per checkpoint."""
    if not curve.values:
        raise UsageError("AUC of an empty learning curve is undefined.")
    excess = np.asarray(curve.values, dtype=np.float64) - baseline_ert_over_n
    return float(np.clip(excess, 0.0, None).mean())


def hitting_rate(curve: LearningCurve, baseline: EvalResult, window: tuple[float, float] = (0.0, 1.0)) -> float:
    points = curve.window(*window)
    if points.shape[0] == 0:
        logger.warning("Hitting rate window %s selects no checkpoints; reporting 0.", window)
        return 0.0
    mu, sigma = baseline.mean_ert_over_n, baseline.std_over_n
    inside = (points >= mu - HIT_BAND * sigma) & (points <= mu + HIT_BAND * sigma)
    return float(inside.mean())


def first_surpass_step(curve: LearningCurve, baseline_ert_over_n: float) -> Optional[int]:
    """Step of the first checkpoint whose ERT/n is below the baseline's; None if none is."""
    for step, value in zip(curve.steps, curve.values):
        if np.isfinite(value) and value < baseline_ert_over_n:
            return int(step)
    return None


@dataclass(frozen=True)
class DiagnosticsReport:
    episodes: pd.DataFrame
    intervals: pd.DataFrame

    @property
    def median_length(self) -> float:
        return float(self.episodes["length"].median())


def default_intervals(n: int) -> list[tuple[float, float]]:
    return [(n / 2, 0.9 * n), (0.9 * n, float(n))]


def episode_diagnostics(
    policy: Policy,
    config: EnvConfig,
    seeds: Sequence[int],
    intervals: Optional[Sequence[tuple[float, float]]] = None,
    workers: int = DEFAULT_EVAL_WORKERS,
) -> DiagnosticsReport:
    """
    Episode lengths and, per fitness interval, the share of decision steps and the
    share of solution evaluations spent there. Intervals are half-open [lo, hi),
    except that the last one includes n.
    """
    if not seeds:
        raise UsageError("Diagnostics need at least one episode.")
    bounds = list(intervals or default_intervals(config.n))
    traces = run_episodes(policy, config, seeds, workers)

    rows = []
    pooled_steps = np.zeros(len(bounds))
    pooled_evals = np.zeros(len(bounds))
    total_steps = total_evals = 0
    for trace in traces:
        fitness = np.asarray(trace.fitness, dtype=np.float64)
        evals = np.asarray(trace.step_evals, dtype=np.float64)
        episode_evals = float(evals.sum())
        row = {"seed": trace.seed, "length": trace.length, "runtime": trace.runtime, "success": trace.success}
        for i, (lo, hi) in enumerate(bounds):
            upper = fitness <= hi if i == len(bounds) - 1 else fitness < hi
            inside = (fitness >= lo) & upper
            count = int(np.count_nonzero(inside))
            spent = float(evals[inside].sum())
            pooled_steps[i] += count
            pooled_evals[i] += spent
            row[f"steps_{i}"] = count
            row[f"fraction_{i}"] = count / trace.length if trace.length else 0.0
            row[f"evals_{i}"] = spent
            row[f"eval_fraction_{i}"] = spent / episode_evals if episode_evals else 0.0
        total_steps += trace.length
        total_evals += episode_evals
        rows.append(row)

    summary = pd.DataFrame(
        {
            "interval": list(range(len(bounds))),
            "lower": [lo for lo, _ in bounds],
            "upper": [hi for _, hi in bounds],
            "step_fraction": pooled_steps / total_steps if total_steps else np.zeros(len(bounds)),
            "eval_fraction": pooled_evals / total_evals if total_evals else np.zeros(len(bounds)),
        }
    )
    return DiagnosticsReport(episodes=pd.DataFrame(rows), intervals=summary)


def paired_t_test(first: EvalResult, second: EvalResult) -> tuple[float, float]:
    if first.seeds != second.seeds:
        raise UsageError("Paired tests need results evaluated on the same seed list.")
    result = stats.ttest_rel(first.normalized, second.normalized)
    return float(result.statistic), float(result.pvalue)


def paired_comparison(results: Sequence[EvalResult], confidence: float = 0.99) -> pd.DataFrame:
    """
    Compare every result with the best one by paired t-tests, Bonferroni corrected.
    `same_as_best` marks results not significantly different from the best ERT.
    """
    if not results:
        raise UsageError("Nothing to compare.")
    best = min(results, key=lambda r: r.mean_ert_over_n)
    others = [r for r in results if r is not best]
    alpha = (1.0 - confidence) / max(1, len(others))
    rows = []
    for res in results:
        row = res.as_row()
        row["gap_to_best"] = gap(res, best)
        if res is best:
            row.update({"t_statistic": np.nan, "p_value": np.nan, "same_as_best": True})
        else:
            t_stat, p_value = paired_t_test(res, best)
            row.update({"t_statistic": t_stat, "p_value": p_value, "same_as_best": bool(p_value >= alpha)})
        rows.append(row)
    return pd.DataFrame(rows)
