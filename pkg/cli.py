"""
Command-line entry point: `python cli.py <command>` or `flask olldac <command>`.
"""
import logging
import os
import sys

import click
import pandas as pd

from oll_dac.errors import ConfigurationError, OllDacError
from oll_dac.harness import ExperimentConfig, baseline_table, default_output_root, run_experiment
from oll_dac.metrics import DEFAULT_EVAL_WORKERS, episode_diagnostics, evaluate, paired_comparison
from oll_dac.onemax_env import EnvConfig
from oll_dac.policy import make_policy
from oll_dac.reward import RewardSpec
from oll_dac.rl_ddqn import tabular_shift_oracle
from oll_dac.rl_ppo import variance_probe
from oll_dac.seeding import derive_seed_list

logger = logging.getLogger("oll_dac")


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _workers() -> int:
    raw = os.environ.get("EVAL_WORKERS")
    try:
        return int(raw) if raw else DEFAULT_EVAL_WORKERS
    except ValueError:
        return DEFAULT_EVAL_WORKERS


CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")


def resolve_config_path(value: str) -> str:
    """A config file path, or the bare name of a preset under configs/."""
    if os.path.isfile(value):
        return value
    name = value if value.endswith((".yaml", ".yml")) else f"{value}.yaml"
    candidate = os.path.join(CONFIG_DIR, name)
    if os.path.isfile(candidate):
        return candidate
    presets = sorted(os.path.splitext(f)[0] for f in os.listdir(CONFIG_DIR)) if os.path.isdir(CONFIG_DIR) else []
    raise click.BadParameter(f"'{value}' is neither a file nor a preset ({', '.join(presets)}).",
                             param_hint="'--config'")


def _echo_table(frame: pd.DataFrame, output: str = None) -> None:
    if output:
        frame.to_csv(output, index=False)
        click.echo(f"wrote {output}")
    click.echo(frame.to_string(index=False))


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log at DEBUG level.")
def cli(verbose):
    """Train and evaluate lambda controllers for the (1+(lambda,lambda))-GA on OneMax."""
    _setup_logging(verbose)


@cli.command()
@click.option("--config", "config_path", help="YAML experiment config, or the name of a preset in configs/.")
@click.option("--n", type=int, help="Problem size.")
@click.option("--seed", type=int, help="Master seed.")
@click.option("--steps", type=int, help="Training environment steps.")
@click.option("--reward", help="naive, scaled, shifted_fixed, shifted_adaptive or scaled_shifted_adaptive.")
@click.option("--bias", "reward_bias", type=float, help="Bias for shifted_fixed.")
@click.option("--gamma", type=float, help="Discount factor.")
@click.option("--algorithm", type=click.Choice(["ddqn", "ppo", "eval_only"]))
@click.option("--output", help="Output root directory.")
def train(config_path, n, seed, steps, reward, reward_bias, gamma, algorithm, output):
    """Run a training experiment (every sweep point and repetition)."""
    try:
        config = ExperimentConfig.from_file(resolve_config_path(config_path)) if config_path else ExperimentConfig()
        config = config.with_overrides(n=n, master_seed=seed, total_steps=steps, reward=reward,
                                       reward_bias=reward_bias, gamma=gamma, algorithm=algorithm)
    except ConfigurationError as exc:
        raise click.UsageError(str(exc)) from exc
    status = run_experiment(config, output or config.output_dir or default_output_root())
    sys.exit(status)


@cli.command(name="eval")
@click.option("--policy", "policy_spec", required=True,
              help="pi_cont, pi_disc, random, constant:<lambda> or a policy CSV path.")
@click.option("--n", type=int, required=True)
@click.option("--seeds", type=int, default=1000, show_default=True, help="Number of evaluation episodes.")
@click.option("--master-seed", type=int, default=0, show_default=True)
@click.option("--output", help="Write the comparison table to this CSV.")
def evaluate_policy(policy_spec, n, seeds, master_seed, output):
    """Evaluate a policy and compare it with both theory baselines on shared seeds."""
    try:
        seed_list = derive_seed_list(master_seed, 0, "eval", seeds)
        env = EnvConfig(n=n)
        results = [evaluate(make_policy(policy_spec, n), env, seed_list, _workers())]
        for name in ("pi_cont", "pi_disc"):
            if results[0].policy_name != name:
                results.append(evaluate(make_policy(name, n), env, seed_list, _workers()))
        _echo_table(paired_comparison(results), output)
    except OllDacError as exc:
        raise click.ClickException(str(exc)) from exc


@cli.command()
@click.option("--n", type=int, required=True)
@click.option("--seeds", type=int, default=1000, show_default=True)
@click.option("--master-seed", type=int, default=0, show_default=True)
@click.option("--output", help="Write the table to this CSV.")
def baselines(n, seeds, master_seed, output):
    """ERT of the continuous and discretized theory policies."""
    try:
        _echo_table(baseline_table(n, derive_seed_list(master_seed, 0, "eval", seeds), _workers()), output)
    except OllDacError as exc:
        raise click.ClickException(str(exc)) from exc


@cli.command()
@click.option("--policy", "policy_spec", default="pi_disc", show_default=True)
@click.option("--n", type=int, required=True)
@click.option("--episodes", type=int, default=1000, show_default=True)
@click.option("--master-seed", type=int, default=0, show_default=True)
@click.option("--output", help="Write per-episode rows to this CSV.")
def diag(policy_spec, n, episodes, master_seed, output):
    """Episode lengths and time spent per fitness interval."""
    try:
        report = episode_diagnostics(make_policy(policy_spec, n), EnvConfig(n=n),
                                     derive_seed_list(master_seed, 0, "diag", episodes), workers=_workers())
    except OllDacError as exc:
        raise click.ClickException(str(exc)) from exc
    if output:
        report.episodes.to_csv(output, index=False)
    click.echo(f"median episode length: {report.median_length:g}")
    click.echo(report.intervals.to_string(index=False))


@cli.command()
@click.option("--policy", "policy_spec", default="pi_disc", show_default=True)
@click.option("--n", type=int, required=True)
@click.option("--gamma", type=float, default=0.99, show_default=True)
@click.option("--episodes", type=int, default=1000, show_default=True)
@click.option("--reward", default="naive", show_default=True)
@click.option("--bias", "reward_bias", type=float, default=0.0)
@click.option("--master-seed", type=int, default=0, show_default=True)
@click.option("--output", help="Write the variance table to this CSV.")
def variance(policy_spec, n, gamma, episodes, reward, reward_bias, master_seed, output):
    """Per-step variance of discounted returns under a fixed policy."""
    try:
        table = variance_probe(make_policy(policy_spec, n), gamma, episodes, EnvConfig(n=n), master_seed,
                               RewardSpec.parse(reward, reward_bias), workers=_workers())
    except OllDacError as exc:
        raise click.ClickException(str(exc)) from exc
    _echo_table(table, output)


@cli.command(name="shift-oracle")
@click.option("--shift", "shift_b", type=float, default=5.0, show_default=True)
@click.option("--gamma", "gammas", type=float, multiple=True, default=(0.5, 0.9, 0.99, 0.995), show_default=True)
def shift_oracle(shift_b, gammas):
    """Check the reward-shift effect on a small tabular MDP for each discount factor."""
    rows = []
    for gamma in gammas:
        try:
            report = tabular_shift_oracle(gamma, shift_b)
        except OllDacError as exc:
            raise click.ClickException(str(exc)) from exc
        rows.append({"gamma": gamma, "passed": report.passed, **report.as_row()})
    click.echo(pd.DataFrame(rows).to_string(index=False))
    if not all(r["passed"] for r in rows):
        sys.exit(1)


if __name__ == "__main__":
    cli()
