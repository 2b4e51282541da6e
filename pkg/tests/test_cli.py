"""Tests for the click command-line interface."""

import os

import pandas as pd
import pytest
from click.testing import CliRunner

from cli import CONFIG_DIR, cli, resolve_config_path


@pytest.fixture
def runner(monkeypatch) -> CliRunner:
    monkeypatch.setenv("EVAL_WORKERS", "1")
    return CliRunner()


class TestCli:
    """Subcommands, exit codes and outputs."""

    def test_help(self, runner: CliRunner) -> None:
        result = runner.invoke(cli, ["--help"])
        assert result.exit_code == 0
        for command in ("train", "eval", "baselines", "diag", "variance", "shift-oracle"):
            assert command in result.output

    def test_shift_oracle(self, runner: CliRunner) -> None:
        result = runner.invoke(cli, ["shift-oracle", "--shift", "2", "--gamma", "0.9", "--gamma", "0.5"])
        assert result.exit_code == 0, result.output
        assert "True" in result.output

    def test_shift_oracle_rejects_undiscounted(self, runner: CliRunner) -> None:
        result = runner.invoke(cli, ["shift-oracle", "--gamma", "1.0"])
        assert result.exit_code == 1
        assert "gamma" in result.output

    def test_baselines_csv(self, runner: CliRunner, tmp_path) -> None:
        out = str(tmp_path / "baselines.csv")
        result = runner.invoke(cli, ["baselines", "--n", "10", "--seeds", "5", "--output", out])
        assert result.exit_code == 0, result.output
        table = pd.read_csv(out)
        assert set(table["policy"]) == {"pi_cont", "pi_disc"}

    def test_eval_unknown_policy(self, runner: CliRunner) -> None:
        result = runner.invoke(cli, ["eval", "--policy", "greedy", "--n", "10", "--seeds", "3"])
        assert result.exit_code == 1
        assert "Unknown policy" in result.output

    def test_eval_constant(self, runner: CliRunner) -> None:
        result = runner.invoke(cli, ["eval", "--policy", "constant:4", "--n", "10", "--seeds", "4"])
        assert result.exit_code == 0, result.output
        assert "constant_4" in result.output

    def test_diag(self, runner: CliRunner, tmp_path) -> None:
        out = str(tmp_path / "episodes.csv")
        result = runner.invoke(cli, ["diag", "--n", "12", "--episodes", "5", "--output", out])
        assert result.exit_code == 0, result.output
        assert "median episode length" in result.output
        assert len(pd.read_csv(out)) == 5

    def test_variance(self, runner: CliRunner) -> None:
        result = runner.invoke(cli, ["variance", "--n", "10", "--episodes", "4"])
        assert result.exit_code == 0, result.output
        assert "return_variance" in result.output

    def test_train_bad_config(self, runner: CliRunner, tmp_path) -> None:
        path = tmp_path / "bad.yaml"
        path.write_text("n: 10\nbogus: 1\n")
        result = runner.invoke(cli, ["train", "--config", str(path)])
        assert result.exit_code == 2
        assert "bogus" in result.output

    def test_train_eval_only(self, runner: CliRunner, tmp_path) -> None:
        path = tmp_path / "quick.yaml"
        path.write_text("algorithm: eval_only\nn: 10\neval_seeds: 4\neval_workers: 1\n")
        result = runner.invoke(cli, ["train", "--config", str(path), "--output", str(tmp_path / "runs")])
        assert result.exit_code == 0, result.output
        assert os.path.exists(tmp_path / "runs" / "quick" / "rep_00" / "summary.json")

    def test_preset_names_resolve(self) -> None:
        assert resolve_config_path("ddqn_n50") == os.path.join(CONFIG_DIR, "ddqn_n50.yaml")
        assert resolve_config_path("ppo_tuned.yaml") == os.path.join(CONFIG_DIR, "ppo_tuned.yaml")

    def test_train_preset_by_name(self, runner: CliRunner, tmp_path) -> None:
        result = runner.invoke(cli, [
            "train", "--config", "eval_theory_n500", "--n", "10", "--output", str(tmp_path / "runs"),
        ])
        assert result.exit_code == 0, result.output
        assert os.path.exists(tmp_path / "runs" / "eval_theory_n500" / "rep_00" / "summary.json")

    def test_train_unknown_preset(self, runner: CliRunner) -> None:
        result = runner.invoke(cli, ["train", "--config", "no_such_preset"])
        assert result.exit_code == 2
        assert "ddqn_n50" in result.output
