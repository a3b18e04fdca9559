"""Tests for the envcf command line."""

import pytest

from app.cli import build_parser, main, resolve_config
from app.errors import ExitCode
from app.services.metrics import read_report
from app.services.storage import INCOMPLETE_MARKER, load_checkpoint, read_manifest


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert _run("gen-data", "--preset", "smoke", "--pairs", 5, "--out", out, "-q") == ExitCode.OK
    return out


class TestResolveConfig:
    """Tests for the layered configuration."""

    def test_flags_override_preset(self, tmp_path):
        args = build_parser().parse_args(
            ["train", "--preset", "smoke", "--data", "d", "--steps", "7", "--seed", "11", "--set", "optimizer.lr=0.01"]
        )
        config = resolve_config(args)
        assert config.optimizer.steps == 7
        assert config.optimizer.lr == 0.01
        assert config.seeds.train == 11
        assert config.seeds.data == 7

    def test_seed_targets_command_stream(self):
        args = build_parser().parse_args(["gen-data", "--preset", "smoke", "--seed", "3"])
        assert resolve_config(args).seeds.data == 3

    def test_snapshot_flag(self):
        args = build_parser().parse_args(["sample", "--data", "d", "--snapshot-every", "5"])
        assert resolve_config(args).sampler.snapshot_every == 5
        args = build_parser().parse_args(["sample", "--data", "d"])
        assert resolve_config(args).sampler.snapshot_every == 0


class TestGenData:
    """Tests for `envcf gen-data`."""

    def test_reproducible(self, tmp_path):
        """The same seed gives byte-identical rasters."""
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert _run("gen-data", "--preset", "smoke", "--pairs", 3, "--seed", 5, "--out", out, "-q") == ExitCode.OK
        files_a = sorted(p.name for p in (a / "pairs").iterdir())
        assert files_a == sorted(p.name for p in (b / "pairs").iterdir())
        for name in files_a:
            assert (a / "pairs" / name).read_bytes() == (b / "pairs" / name).read_bytes()
        assert read_manifest(a).argv[:2] == ["envcf", "gen-data"]


class TestUsageErrors:
    """Tests for argument and configuration errors."""

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as exc_info:
            main([])
        assert exc_info.value.code == 2

    def test_missing_required_option(self):
        with pytest.raises(SystemExit) as exc_info:
            main(["train"])
        assert exc_info.value.code == 2

    def test_bad_override(self, tmp_path):
        assert _run("gen-data", "--set", "optimizer.nope=1", "--out", tmp_path, "-q") == ExitCode.CONFIG

    def test_cdiff_sample_needs_checkpoint(self, data_dir, tmp_path):
        assert _run("sample", "--preset", "smoke", "--data", data_dir, "--out", tmp_path, "-q") == ExitCode.CONFIG


class TestCommands:
    """Tests for train, sample, bench and eval."""

    def test_train_zero_steps(self, data_dir, tmp_path):
        assert _run("train", "--preset", "smoke", "--data", data_dir, "--steps", 0, "--out", tmp_path, "-q") == ExitCode.OK
        assert load_checkpoint(tmp_path / "checkpoint.pt").state.step == 0

    def test_cdiff_sample_snapshots(self, data_dir, tmp_path):
        """--snapshot-every writes the reverse-chain frames next to the samples."""
        train_dir = tmp_path / "train"
        assert _run("train", "--preset", "smoke", "--data", data_dir, "--steps", 0, "--out", train_dir, "-q") == ExitCode.OK
        samples = tmp_path / "cdiff"
        code = _run(
            "sample", "--preset", "smoke", "--data", data_dir, "--checkpoint", train_dir / "checkpoint.pt",
            "--snapshot-every", 10, "--out", samples, "-q",
        )
        assert code == ExitCode.OK
        chains = sorted((samples / "snapshots").iterdir())
        assert len(chains) == len(list(samples.glob("*.png"))) >= 1
        for chain in chains:
            assert sorted(p.name for p in chain.glob("*.png")) == ["step_00000.png", "step_00010.png"]

    def test_bench_bilinear(self, data_dir, tmp_path, capsys):
        code = _run("bench", "--preset", "smoke", "--data", data_dir, "--method", "bilinear", "--out", tmp_path, "-q")
        assert code == ExitCode.OK
        rows = read_report(tmp_path / "report.csv")
        assert [row["method"] for row in rows] == ["bilinear"]
        assert "bilinear" in capsys.readouterr().out

    def test_baseline_sample_then_eval(self, data_dir, tmp_path):
        samples = tmp_path / "nearest"
        assert _run("sample", "--preset", "smoke", "--data", data_dir, "--method", "nearest", "--out", samples, "-q") == ExitCode.OK
        report_dir = tmp_path / "eval"
        code = _run("eval", "--preset", "smoke", "--data", data_dir, "--pred", f"nearest={samples}", "--out", report_dir, "-q")
        assert code == ExitCode.OK
        assert read_report(report_dir / "report.csv")[0]["method"] == "nearest"

    def test_eval_missing_prediction(self, data_dir, tmp_path):
        """Missing prediction rasters exit with the data error code and mark the run incomplete."""
        empty = tmp_path / "empty"
        empty.mkdir()
        out = tmp_path / "eval"
        code = _run("eval", "--preset", "smoke", "--data", data_dir, "--pred", f"nearest={empty}", "--out", out, "-q")
        assert code == ExitCode.DATA
        assert (out / INCOMPLETE_MARKER).exists()
        assert not read_manifest(out).complete

    def test_malformed_pred(self, data_dir, tmp_path):
        code = _run("eval", "--preset", "smoke", "--data", data_dir, "--pred", "nearest", "--out", tmp_path, "-q")
        assert code == ExitCode.CONFIG
