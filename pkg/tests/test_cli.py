import json
from pathlib import Path

import pytest
import yaml
from click.testing import CliRunner

from aenerf.cli import main
from conftest import TINY


@pytest.fixture()
def runner() -> CliRunner:
    return CliRunner()


def write_tiny_config(path: Path, seed: int = 3) -> Path:
    mapping = dict(TINY)
    mapping["seed"] = seed
    cfg = path / "tiny.yaml"
    cfg.write_text(yaml.safe_dump(mapping))
    return cfg


class TestSynthData:
    def test_writes_layout(self, runner, tmp_path):
        result = runner.invoke(
            main, ["synth-data", "--out", str(tmp_path / "ds"), "--count", "3", "--resolution", "24"]
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "ds" / "manifest.json").exists()
        assert (tmp_path / "ds" / "factors.jsonl").exists()
        assert len(list((tmp_path / "ds" / "images").glob("*.png"))) == 3


class TestTrain:
    def test_stage1_writes_checkpoint(self, runner, tmp_path):
        cfg = write_tiny_config(tmp_path)
        out = tmp_path / "ck.aenerf"
        log = tmp_path / "loss.jsonl"
        result = runner.invoke(
            main,
            ["train", "--stage", "1", "--config", str(cfg), "--steps", "2", "--out", str(out), "--log", str(log)],
        )
        assert result.exit_code == 0, result.output
        assert out.exists()
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert len(records) == 2 and records[0]["stage"] == 1

    def test_stage2_requires_stage1(self, runner, tmp_path):
        cfg = write_tiny_config(tmp_path)
        result = runner.invoke(
            main, ["train", "--stage", "2", "--config", str(cfg), "--out", str(tmp_path / "x.aenerf")]
        )
        assert result.exit_code == 2

    def test_seed_determinism(self, runner, tmp_path):
        cfg = write_tiny_config(tmp_path)
        logs = []
        for name in ("a", "b"):
            log = tmp_path / f"{name}.jsonl"
            result = runner.invoke(
                main,
                [
                    "train", "--stage", "1", "--config", str(cfg), "--steps", "3",
                    "--seed", "21", "--out", str(tmp_path / f"{name}.aenerf"), "--log", str(log),
                ],
            )
            assert result.exit_code == 0, result.output
            logs.append(log.read_text())
        assert logs[0] == logs[1]


class TestUsageAndErrors:
    def test_eval_without_checkpoint_is_usage_error(self, runner, monkeypatch):
        monkeypatch.delenv("AENERF_MODEL", raising=False)
        result = runner.invoke(main, ["eval", "--suite", "swap"])
        assert result.exit_code == 2

    def test_runtime_error_record_is_machine_parsable(self, runner, tmp_path):
        # golden error-record contract: one JSON object per line on stderr
        result = runner.invoke(
            main, ["eval", "--suite", "swap", "--checkpoint", str(tmp_path / "missing.aenerf")]
        )
        assert result.exit_code == 1
        record = json.loads(result.stderr.strip().splitlines()[-1])
        assert set(record) == {"error", "message"}
        assert record["error"] == "IoError"

    def test_unknown_flag_exit_2(self, runner):
        assert runner.invoke(main, ["train", "--bogus"]).exit_code == 2

    def test_help_lists_subcommands(self, runner):
        result = runner.invoke(main, ["--help"])
        for name in ("synth-data", "train", "pseudo-gen", "eval", "render", "serve", "export-report"):
            assert name in result.output


class TestPipelineCommands:
    @pytest.fixture(scope="class")
    def stage1_checkpoint(self, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("cli-pipe")
        cfg = write_tiny_config(tmp)
        runner = CliRunner()
        out = tmp / "s1.aenerf"
        result = runner.invoke(
            main, ["train", "--stage", "1", "--config", str(cfg), "--steps", "2", "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        return out

    def test_pseudo_gen(self, runner, stage1_checkpoint, tmp_path):
        result = runner.invoke(
            main,
            ["pseudo-gen", "--checkpoint", str(stage1_checkpoint), "--count", "3", "--out", str(tmp_path / "ps")],
        )
        assert result.exit_code == 0, result.output
        assert len((tmp_path / "ps" / "pairs.jsonl").read_text().splitlines()) == 3

    def test_render_from_codes(self, runner, stage1_checkpoint, tmp_path):
        out = tmp_path / "img.png"
        result = runner.invoke(
            main,
            ["render", "--checkpoint", str(stage1_checkpoint), "--out", str(out), "--azimuth", "90"],
        )
        assert result.exit_code == 0, result.output
        assert out.exists()

    def test_eval_swap_suite(self, runner, stage1_checkpoint, tmp_path):
        report_path = tmp_path / "report.json"
        result = runner.invoke(
            main,
            [
                "eval", "--suite", "swap", "--checkpoint", str(stage1_checkpoint),
                "--triples", "1", "--out", str(report_path),
            ],
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(report_path.read_text())
        assert payload["metrics"]

        exported = tmp_path / "report.txt"
        result = runner.invoke(
            main, ["export-report", "--report", str(report_path), "--out", str(exported)]
        )
        assert result.exit_code == 0
        assert len(exported.read_text().splitlines()) == len(payload["metrics"])

    def test_env_var_checkpoint(self, runner, stage1_checkpoint, tmp_path, monkeypatch):
        monkeypatch.setenv("AENERF_MODEL", str(stage1_checkpoint))
        out = tmp_path / "env.png"
        result = runner.invoke(main, ["render", "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert out.exists()
