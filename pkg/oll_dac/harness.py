"""
Experiment orchestration: config loading, seed derivation, run directories,
artifact persistence and the final summary table.

Layout of one experiment:

    <output_dir>/<name>/[<sweep_param>=<value>/]rep_<r>/
        manifest.json  curve.csv  summary.json  warmup_rewards.csv
        policies/step_<step>.csv  best_policy.csv  online_net.json
    <output_dir>/<name>/[...]/summary_table.csv
"""
import dataclasses
import datetime
import hashlib
import json
import logging
import os
import typing
from dataclasses import dataclass, field, fields
from typing import Any, Optional

import pandas as pd
import yaml

from oll_dac import __version__
from oll_dac.checkpoints import CheckpointRecord, TrainingLog
from oll_dac.errors import ConfigurationError, OllDacError, TrainingDivergedError
from oll_dac.metrics import (
    DEFAULT_EVAL_WORKERS,
    TRAINING_WINDOWS,
    EvalResult,
    auc,
    best_policy_selection,
    evaluate,
    first_surpass_step,
    gap,
    hitting_rate,
    paired_comparison,
)
from oll_dac.neural import save_checkpoint
from oll_dac.onemax_env import EnvConfig, OneMaxDacEnv
from oll_dac.policy import ContinuousTheoryPolicy, DiscreteTheoryPolicy, make_policy
from oll_dac.reward import RewardSpec
from oll_dac.rl_ddqn import DdqnConfig, DdqnTrainer, ReplayBuffer, warmup
from oll_dac.rl_ppo import PpoConfig, PpoTrainer
from oll_dac.seeding import derive_seed, derive_seed_list, make_rng

logger = logging.getLogger(__name__)

ALGORITHMS = ("ddqn", "ppo", "eval_only")
_DEFAULT_LR = {"ddqn": 0.001, "ppo": 0.0003, "eval_only": 0.001}


def _env_str(name: str, default: str) -> str:
    raw = os.environ.get(name)
    return raw if raw else default


def default_output_root() -> str:
    return _env_str("OLL_DAC_OUTPUT_ROOT", os.path.join(".data", "runs"))


def derive_seeds(master_seed: int, repetition: int, purpose_tag: str) -> int:
    return derive_seed(master_seed, repetition, purpose_tag)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    algorithm: str = "ddqn"
    n: int = 50
    cutoff_evals: Optional[int] = None
    reward: str = "naive"
    reward_bias: float = 0.0
    gamma: float = 0.99
    learning_rate: Optional[float] = None
    total_steps: int = 500_000
    checkpoint_every: int = 2000
    hidden_units: int = 50
    # ddqn
    epsilon: float = 0.2
    tau: float = 0.01
    batch_size: int = 2048
    buffer_capacity: int = 1_000_000
    warmup_transitions: int = 10_000
    bootstrap_on_truncation: bool = True
    # ppo
    ppo_preset: str = "default"
    rollout_steps: int = 2048
    minibatch_size: int = 64
    epochs: int = 10
    gae_lambda: float = 0.95
    clip_range: float = 0.2
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    # evaluation
    policy: str = "pi_disc"
    eval_seeds: int = 1000
    quick_eval_seeds: int = 100
    final_eval_seeds: int = 1000
    top_k: int = 5
    baselines: str = "pi_cont,pi_disc"
    eval_workers: int = DEFAULT_EVAL_WORKERS
    # orchestration
    repetitions: int = 1
    master_seed: int = 0
    output_dir: str = ""
    save_network: bool = True
    sweep_param: str = ""
    sweep_values: list = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}, got '{self.algorithm}'.")
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be at least 1.")
        if self.ppo_preset not in ("default", "tuned"):
            raise ConfigurationError("ppo_preset must be 'default' or 'tuned'.")
        if self.sweep_param:
            if self.sweep_param not in {f.name for f in fields(self)} or self.sweep_param.startswith("sweep_"):
                raise ConfigurationError(f"Cannot sweep over unknown key '{self.sweep_param}'.")
            if not self.sweep_values:
                raise ConfigurationError("sweep_param is set but sweep_values is empty.")
        RewardSpec.parse(self.reward, self.reward_bias)
        self.env_config()

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigurationError(f"Unknown config keys: {', '.join(unknown)}.")
        values = {key: _coerce(key, value, known[key]) for key, value in data.items()}
        return cls(**values)

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"Failed to read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError(f"Config {path} must be a flat key: value mapping.")
        data.setdefault("name", os.path.splitext(os.path.basename(path))[0])
        return cls.from_mapping(data)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        values = self.as_dict()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return ExperimentConfig.from_mapping(values)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        payload = json.dumps(self.as_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

    def env_config(self, seed: int = 0) -> EnvConfig:
        return EnvConfig(n=self.n, cutoff_evals=self.cutoff_evals, seed=seed)

    def reward_spec(self) -> RewardSpec:
        return RewardSpec.parse(self.reward, self.reward_bias)

    def ddqn_config(self, seed: int, quick_seeds: tuple[int, ...]) -> DdqnConfig:
        return DdqnConfig(
            env=self.env_config(seed),
            reward=self.reward_spec(),
            epsilon=self.epsilon,
            gamma=self.gamma,
            tau=self.tau,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate if self.learning_rate is not None else _DEFAULT_LR["ddqn"],
            buffer_capacity=self.buffer_capacity,
            warmup_transitions=self.warmup_transitions,
            total_steps=self.total_steps,
            checkpoint_every=self.checkpoint_every,
            hidden_units=self.hidden_units,
            bootstrap_on_truncation=self.bootstrap_on_truncation,
            quick_eval_seeds=quick_seeds,
            eval_workers=self.eval_workers,
            seed=seed,
        )

    def ppo_config(self, seed: int, quick_seeds: tuple[int, ...], reward_spec: RewardSpec) -> PpoConfig:
        common = dict(
            rollout_steps=self.rollout_steps,
            value_coef=self.value_coef,
            max_grad_norm=self.max_grad_norm,
            total_steps=self.total_steps,
            checkpoint_every=self.checkpoint_every,
            hidden_units=self.hidden_units,
            quick_eval_seeds=quick_seeds,
            eval_workers=self.eval_workers,
            seed=seed,
        )
        if self.ppo_preset == "tuned":
            return PpoConfig.tuned(self.env_config(seed), reward_spec, **common)
        return PpoConfig(
            env=self.env_config(seed),
            reward=reward_spec,
            learning_rate=self.learning_rate if self.learning_rate is not None else _DEFAULT_LR["ppo"],
            minibatch_size=self.minibatch_size,
            epochs=self.epochs,
            gamma=self.gamma,
            gae_lambda=self.gae_lambda,
            clip_range=self.clip_range,
            entropy_coef=self.entropy_coef,
            **common,
        )

    def expand_sweep(self) -> list[tuple[str, "ExperimentConfig"]]:
        if not self.sweep_param:
            return [("", self)]
        expanded = []
        for value in self.sweep_values:
            child = self.as_dict()
            child.update({self.sweep_param: value, "sweep_param": "", "sweep_values": []})
            expanded.append((f"{self.sweep_param}={value}", ExperimentConfig.from_mapping(child)))
        return expanded


def _coerce(key: str, value: Any, spec: dataclasses.Field) -> Any:
    optional = typing.get_origin(spec.type) is typing.Union
    base = next((a for a in typing.get_args(spec.type) if a is not type(None)), None) if optional else spec.type
    annotation = getattr(base, "__name__", str(base))
    if value is None:
        if optional:
            return None
        raise ConfigurationError(f"Config key '{key}' cannot be empty.")
    try:
        if annotation == "int":
            if isinstance(value, bool):
                raise ValueError
            number = float(value)
            if not number.is_integer():
                raise ValueError
            return int(number)
        if annotation == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if annotation == "bool":
            if isinstance(value, bool):
                return value
            lowered = str(value).strip().lower()
            if lowered in ("true", "yes", "1"):
                return True
            if lowered in ("false", "no", "0"):
                return False
            raise ValueError
        if annotation == "list":
            if isinstance(value, str):
                return [yaml.safe_load(v) for v in value.split(",") if v.strip()]
            return list(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"Config key '{key}' expects {annotation}, got {value!r}.") from None


@dataclass
class RunManifest:
    config: dict
    code_version: str
    seeds: dict
    started_at: str
    finished_at: Optional[str] = None
    status: str = "running"
    resolved_bias: Optional[float] = None
    error: Optional[str] = None
    artifacts: list[str] = field(default_factory=list)

    def write(self, run_dir: str) -> None:
        with open(os.path.join(run_dir, "manifest.json"), "w", encoding="utf-8") as f:
            json.dump(dataclasses.asdict(self), f, indent=2, sort_keys=True)


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


class RunRecorder:
    """Writes checkpoint rows and policy tables as they arrive; nothing outside `run_dir`."""

    CURVE_COLUMNS = ["step", "mean_ert_over_n", "std_ert_over_n", "success_rate",
                     "pairwise_difference", "loss_mean", "loss_std"]

    def __init__(self, run_dir: str):
        self.run_dir = run_dir
        self.policy_dir = os.path.join(run_dir, "policies")
        os.makedirs(self.policy_dir, exist_ok=True)
        self.curve_path = os.path.join(run_dir, "curve.csv")
        pd.DataFrame(columns=self.CURVE_COLUMNS).to_csv(self.curve_path, index=False)

    def on_checkpoint(self, record: CheckpointRecord) -> None:
        pd.DataFrame([record.as_row()], columns=self.CURVE_COLUMNS).to_csv(
            self.curve_path, mode="a", header=False, index=False
        )
        record.policy.to_csv(os.path.join(self.policy_dir, f"step_{record.step:07d}.csv"))

    def inventory(self) -> list[str]:
        return list_artifacts(self.run_dir)


def list_artifacts(run_dir: str) -> list[str]:
    found = []
    for root, _, files in os.walk(run_dir):
        for name in files:
            found.append(os.path.relpath(os.path.join(root, name), run_dir))
    return sorted(found)


def resolve_reward_spec(spec: RewardSpec, env_config: EnvConfig, transitions: int, seed: int) -> tuple[RewardSpec, Any]:
    """Resolve an adaptive bias from a uniform-random warm-up sample (used where the agent has no warm-up)."""
    if not spec.needs_resolution:
        return spec, None
    env = OneMaxDacEnv(env_config)
    env.reset(seed=seed)
    warm = warmup(env, ReplayBuffer(max(1, transitions)), make_rng(seed), transitions, spec)
    return warm.reward_spec, warm


def evaluate_baselines(config: ExperimentConfig, seeds: list[int]) -> list[EvalResult]:
    env = config.env_config()
    names = [b.strip() for b in config.baselines.split(",") if b.strip()]
    return [evaluate(make_policy(name, config.n), env, seeds, config.eval_workers) for name in names]


def baseline_table(n: int, seeds: list[int], workers: int = DEFAULT_EVAL_WORKERS,
                   cutoff_evals: Optional[int] = None) -> pd.DataFrame:
    env = EnvConfig(n=n, cutoff_evals=cutoff_evals)
    results = [evaluate(ContinuousTheoryPolicy(n), env, seeds, workers),
               evaluate(DiscreteTheoryPolicy(n), env, seeds, workers)]
    return paired_comparison(results)


def _train_repetition(config: ExperimentConfig, repetition: int, run_dir: str, manifest: RunManifest) -> dict:
    train_seed = derive_seeds(config.master_seed, repetition, "train")
    quick_seeds = tuple(derive_seed_list(config.master_seed, repetition, "quick_eval", config.quick_eval_seeds))
    final_seeds = derive_seed_list(config.master_seed, repetition, "final_eval", config.final_eval_seeds)
    recorder = RunRecorder(run_dir)
    warm = None

    if config.algorithm == "ddqn":
        trainer = DdqnTrainer(config.ddqn_config(train_seed, quick_seeds), recorder.on_checkpoint)
    else:
        spec, warm = resolve_reward_spec(config.reward_spec(), config.env_config(train_seed),
                                         config.warmup_transitions, derive_seeds(config.master_seed, repetition, "warmup"))
        trainer = PpoTrainer(config.ppo_config(train_seed, quick_seeds, spec), recorder.on_checkpoint)
    log: TrainingLog = trainer.run_training()
    if warm is not None:
        log.warmup_stats, log.warmup_rewards = warm.stats, warm.naive_rewards

    manifest.resolved_bias = log.resolved_bias
    if log.warmup_rewards is not None:
        pd.DataFrame({"naive_reward": log.warmup_rewards}).to_csv(os.path.join(run_dir, "warmup_rewards.csv"), index=False)
    if config.save_network:
        net = trainer.online if config.algorithm == "ddqn" else trainer.model.actor
        save_checkpoint(os.path.join(run_dir, "online_net.json"), net,
                        {"n": config.n, "architecture": net.sizes, "config_digest": config.digest()})

    env = config.env_config()
    best, best_result = best_policy_selection(log.candidates(), env, final_seeds, quick_seeds, config.top_k,
                                              config.eval_workers)
    best.policy.to_csv(os.path.join(run_dir, "best_policy.csv"))
    baselines = evaluate_baselines(config, final_seeds)
    table = paired_comparison([best_result] + baselines)
    table.loc[0, "policy"] = f"{config.algorithm}_best"
    table.to_csv(os.path.join(run_dir, "summary_table.csv"), index=False)

    curve = log.curve()
    disc = next((b for b in baselines if b.policy_name == "pi_disc"), baselines[0] if baselines else None)
    summary = {
        "config": config.as_dict(),
        "repetition": repetition,
        "resolved_bias": log.resolved_bias,
        "warmup_stats": log.warmup_stats.as_dict() if log.warmup_stats else None,
        "best_step": best.step,
        "best_ert_over_n": best_result.mean_ert_over_n,
        "best_std_over_n": best_result.std_over_n,
        "baselines": [b.as_row() for b in baselines],
    }
    if disc is not None and curve.values:
        summary["gap_to_baseline"] = gap(best_result, disc)
        summary["auc"] = auc(curve, disc.mean_ert_over_n)
        summary["hitting_rate"] = {name: hitting_rate(curve, disc, w) for name, w in TRAINING_WINDOWS.items()}
        summary["first_surpass_step"] = first_surpass_step(curve, disc.mean_ert_over_n)
    return summary


def _eval_repetition(config: ExperimentConfig, repetition: int, run_dir: str) -> dict:
    seeds = derive_seed_list(config.master_seed, repetition, "eval", config.eval_seeds)
    policy = make_policy(config.policy, config.n)
    result = evaluate(policy, config.env_config(), seeds, config.eval_workers)
    results = [result] + [b for b in evaluate_baselines(config, seeds) if b.policy_name != result.policy_name]
    table = paired_comparison(results)
    table.to_csv(os.path.join(run_dir, "summary_table.csv"), index=False)
    pd.DataFrame({"seed": result.seeds, "runtime": result.runtimes, "success": result.successes}).to_csv(
        os.path.join(run_dir, "runtimes.csv"), index=False
    )
    return {"config": config.as_dict(), "repetition": repetition, "policy": result.as_row(),
            "baselines": table.to_dict(orient="records")}


SEED_RULE = "derive_seed(master_seed, repetition, tag); list entry i uses tag '<tag>/<i>'"


def run_seeds(config: ExperimentConfig, repetition: int, head: int = 3) -> dict:
    """Seeds a repetition draws from, with the first entries of each evaluation seed list."""

    def listed(tag: str, count: int) -> dict:
        seeds = derive_seed_list(config.master_seed, repetition, tag, min(count, head))
        return {"tag": tag, "count": count, "first": seeds}

    if config.algorithm == "eval_only":
        return {"rule": SEED_RULE, "eval": listed("eval", config.eval_seeds)}
    seeds = {
        "rule": SEED_RULE,
        "train": derive_seeds(config.master_seed, repetition, "train"),
        "quick_eval": listed("quick_eval", config.quick_eval_seeds),
        "final_eval": listed("final_eval", config.final_eval_seeds),
    }
    if config.algorithm == "ppo" and config.reward_spec().needs_resolution:
        seeds["warmup"] = derive_seeds(config.master_seed, repetition, "warmup")
    return seeds


def _run_single(config: ExperimentConfig, base_dir: str) -> bool:
    ok = True
    for repetition in range(config.repetitions):
        run_dir = os.path.join(base_dir, f"rep_{repetition:02d}")
        os.makedirs(run_dir, exist_ok=True)
        manifest = RunManifest(
            config=config.as_dict(),
            code_version=__version__,
            seeds=run_seeds(config, repetition),
            started_at=_utc_now(),
        )
        manifest.write(run_dir)
        try:
            if config.algorithm == "eval_only":
                summary = _eval_repetition(config, repetition, run_dir)
            else:
                summary = _train_repetition(config, repetition, run_dir, manifest)
            with open(os.path.join(run_dir, "summary.json"), "w", encoding="utf-8") as f:
                json.dump(summary, f, indent=2, sort_keys=True, default=float)
            manifest.status = "finished"
        except TrainingDivergedError as exc:
            manifest.status, manifest.error = "failed", f"{exc} {exc.diagnostic}"
            ok = False
        except OllDacError as exc:
            logger.exception("Repetition %d failed: %s", repetition, exc)
            manifest.status, manifest.error = "failed", str(exc)
            ok = False
        except Exception as exc:
            logger.exception("Repetition %d aborted: %s", repetition, exc)
            manifest.status, manifest.error = "failed", f"{type(exc).__name__}: {exc}"
            ok = False
        manifest.finished_at = _utc_now()
        manifest.artifacts = list_artifacts(run_dir)
        manifest.write(run_dir)
    return ok


def run_experiment(config: ExperimentConfig, output_dir: Optional[str] = None) -> int:
    """Run every sweep point and repetition; returns a process exit status."""
    root = output_dir or config.output_dir or default_output_root()
    experiment_dir = os.path.join(root, config.name)
    os.makedirs(experiment_dir, exist_ok=True)
    logger.info("Experiment '%s' (%s, n=%d) -> %s", config.name, config.algorithm, config.n, experiment_dir)
    ok = True
    for label, point in config.expand_sweep():
        ok = _run_single(point, os.path.join(experiment_dir, label) if label else experiment_dir) and ok
    return 0 if ok else 1
