"""
Checkpoint records shared by both trainers, and the background evaluator that
scores greedy-policy snapshots without blocking the training loop.
"""
import logging
import threading
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from oll_dac.metrics import Candidate, EvalResult, LearningCurve, evaluate
from oll_dac.onemax_env import EnvConfig
from oll_dac.policy import TabularPolicy
from oll_dac.reward import RewardSpec, RewardStats

logger = logging.getLogger(__name__)


@dataclass
class CheckpointRecord:
    step: int
    policy: TabularPolicy
    pairwise_difference: int
    loss_mean: float = float("nan")
    loss_std: float = float("nan")
    result: Optional[EvalResult] = None

    @property
    def quick_mean(self) -> Optional[float]:
        return self.result.mean_ert_over_n if self.result is not None else None

    def as_row(self) -> dict:
        return {
            "step": self.step,
            "mean_ert_over_n": self.quick_mean if self.result is not None else np.nan,
            "std_ert_over_n": self.result.std_over_n if self.result is not None else np.nan,
            "success_rate": self.result.success_rate if self.result is not None else np.nan,
            "pairwise_difference": self.pairwise_difference,
            "loss_mean": self.loss_mean,
            "loss_std": self.loss_std,
        }


@dataclass
class TrainingLog:
    algorithm: str
    reward_spec: RewardSpec
    checkpoints: list[CheckpointRecord] = field(default_factory=list)
    warmup_stats: Optional[RewardStats] = None
    warmup_rewards: Optional[np.ndarray] = field(default=None, repr=False)
    diverged: Optional[dict] = None

    @property
    def resolved_bias(self) -> Optional[float]:
        return self.reward_spec.resolved_bias

    def candidates(self) -> list[Candidate]:
        return [Candidate(c.step, c.policy, c.quick_mean) for c in self.checkpoints]

    def curve(self) -> LearningCurve:
        scored = [c for c in self.checkpoints if c.result is not None]
        return LearningCurve(tuple(c.step for c in scored), tuple(c.quick_mean for c in scored))


def summarize_losses(losses: Sequence[float]) -> tuple[float, float]:
    if not losses:
        return float("nan"), float("nan")
    values = np.asarray(losses, dtype=np.float64)
    return float(values.mean()), float(values.std())


class CheckpointEvaluator:
    """
    Scores checkpoints on a single background worker and hands finished records
    to `on_record` strictly in submission order.
    """

    def __init__(
        self,
        config: EnvConfig,
        seeds: Sequence[int],
        workers: int = 1,
        on_record: Optional[Callable[[CheckpointRecord], None]] = None,
    ):
        self._config = config
        self._seeds = list(seeds)
        self._workers = workers
        self._on_record = on_record
        self._lock = threading.Lock()
        self._pending: deque[tuple[CheckpointRecord, Optional[Future]]] = deque()
        self._executor = ThreadPoolExecutor(max_workers=1) if self._seeds else None

    def submit(self, record: CheckpointRecord) -> None:
        future = None
        if self._executor is not None:
            future = self._executor.submit(evaluate, record.policy, self._config, self._seeds, self._workers)
        with self._lock:
            self._pending.append((record, future))
        self.drain()

    def drain(self, block: bool = False) -> None:
        while True:
            with self._lock:
                if not self._pending:
                    return
                record, future = self._pending[0]
                if future is not None and not block and not future.done():
                    return
                self._pending.popleft()
            if future is not None:
                try:
                    record.result = future.result()
                except Exception as exc:
                    logger.exception("Checkpoint evaluation at step %d failed: %s", record.step, exc)
            logger.info(
                "checkpoint step=%d ert/n=%s D=%d loss=%.4g",
                record.step,
                f"{record.quick_mean:.4f}" if record.quick_mean is not None else "n/a",
                record.pairwise_difference,
                record.loss_mean,
            )
            if self._on_record:
                self._on_record(record)

    def close(self) -> None:
        self.drain(block=True)
        if self._executor is not None:
            self._executor.shutdown(wait=True)
