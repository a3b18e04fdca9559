"""End-to-end tests for the pipelines behind the CLI."""

import shutil

import numpy as np
import pytest
import torch

from app.config import apply_overrides, get_default_config, get_smoke_config
from app.errors import DataError, ExitCode, InvalidArgumentError, StageError, TrainingFault
from app.services import pipeline
from app.services.metrics import read_report
from app.services.storage import INCOMPLETE_MARKER, LossLog, load_checkpoint, read_manifest
from app.services.trainer import CHECKPOINT_NAME


@pytest.fixture
def restore_torch_state():
    """Serial mode switches torch to deterministic kernels and one thread; undo that afterwards."""
    deterministic = torch.are_deterministic_algorithms_enabled()
    threads = torch.get_num_threads()
    yield
    torch.use_deterministic_algorithms(deterministic)
    torch.set_num_threads(threads)


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    report = pipeline.pipeline_smoke(get_smoke_config(), out)
    return out, report


def _tree_bytes(root, pattern):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.glob(pattern))}


class TestPipelineSmoke:
    """Tests for the full gen-data -> train -> sample -> eval run."""

    def test_report_has_every_method(self, smoke_run):
        out, report = smoke_run
        assert report.methods() == list(pipeline.ALL_METHODS)
        rows = read_report(out / "eval" / "report.csv")
        assert [row["method"] for row in rows] == list(pipeline.ALL_METHODS)
        assert all(int(row["n_items"]) == 2 for row in rows)
        assert (out / "eval" / "reported.csv").exists()

    def test_layout(self, smoke_run):
        """Every stage leaves its outputs and a complete manifest."""
        out, _ = smoke_run
        assert (out / "data" / "meta.json").exists()
        assert (out / "train" / CHECKPOINT_NAME).exists()
        assert (out / "train" / "loss.csv").exists()
        for method in pipeline.ALL_METHODS:
            assert len(list((out / "samples" / method).glob("*_hr.png"))) == 2
            assert read_manifest(out / "samples" / method).complete
        for stage in ("", "data", "train", "eval"):
            assert read_manifest(out / stage).complete
        assert not (out / INCOMPLETE_MARKER).exists()

    def test_metrics_are_sane(self, smoke_run):
        _, report = smoke_run
        for row in report.rows:
            assert 0.0 < row.psnr_db <= 100.0
            assert -1.0 <= row.ssim <= 1.0
            assert row.nmse >= 0.0

    def test_rerun_is_identical(self, smoke_run, tmp_path, restore_torch_state):
        """A serial rerun with the same seeds reproduces data, samples, weights and report."""
        first_out, _ = smoke_run
        serial = apply_overrides(get_smoke_config(), ["execution.serial=true"])
        a = tmp_path / "a"
        b = tmp_path / "b"
        pipeline.pipeline_smoke(serial, a)
        pipeline.pipeline_smoke(serial, b)

        for pattern in ("data/pairs/*", "samples/*/*.png", "eval/*.csv"):
            assert _tree_bytes(a, pattern) == _tree_bytes(b, pattern)
        assert _tree_bytes(a, "data/pairs/*") == _tree_bytes(first_out, "data/pairs/*")

        ckpt_a = load_checkpoint(a / "train" / CHECKPOINT_NAME).state
        ckpt_b = load_checkpoint(b / "train" / CHECKPOINT_NAME).state
        for name, value in ckpt_a.model.state_dict().items():
            assert torch.equal(value, ckpt_b.model.state_dict()[name])
        assert read_manifest(a).config_hash == read_manifest(b).config_hash

    def test_stage_failure(self, tmp_path, monkeypatch):
        """A failing stage surfaces as StageError naming it, with the cause's exit code."""

        def failing_train(*args, **kwargs):
            raise TrainingFault("non-finite loss at step 3", diagnostics={"step": 3})

        monkeypatch.setattr(pipeline, "run_train", failing_train)
        with pytest.raises(StageError) as exc_info:
            pipeline.pipeline_smoke(get_smoke_config(), tmp_path)
        assert exc_info.value.stage == "train"
        assert exc_info.value.exit_code == ExitCode.TRAINING
        assert exc_info.value.diagnostics["step"] == 3
        assert (tmp_path / INCOMPLETE_MARKER).exists()


class TestBench:
    """Tests for run_bench and run_eval."""

    def test_baselines_only(self, smoke_run, tmp_path):
        out, _ = smoke_run
        report = pipeline.run_bench(get_smoke_config(), out / "data", ["nearest", "bilinear"], tmp_path, dump_errors=True)
        assert report.methods() == ["nearest", "bilinear"]
        assert len(list((tmp_path / "errors" / "nearest").glob("*_err.png"))) == 2

    def test_bench_matches_eval_of_written_samples(self, smoke_run, tmp_path):
        """Scoring PNG samples from disk agrees with in-memory scoring up to 8-bit quantization."""
        out, report = smoke_run
        bench = pipeline.run_bench(get_smoke_config(), out / "data", ["nearest"], tmp_path)
        assert bench.row("nearest").psnr_db == pytest.approx(report.row("nearest").psnr_db, abs=0.5)

    def test_cdiff_needs_checkpoint(self, smoke_run, tmp_path):
        out, _ = smoke_run
        with pytest.raises(InvalidArgumentError):
            pipeline.run_bench(get_smoke_config(), out / "data", ["cdiff"], tmp_path)

    def test_unknown_method(self, smoke_run, tmp_path):
        out, _ = smoke_run
        with pytest.raises(InvalidArgumentError):
            pipeline.run_bench(get_smoke_config(), out / "data", ["bicubic"], tmp_path)

    def test_masked_eval(self, smoke_run, tmp_path):
        out, _ = smoke_run
        report = pipeline.run_eval(
            get_smoke_config(),
            out / "data",
            {"nearest": out / "samples" / "nearest"},
            tmp_path,
            mask_buildings=True,
        )
        assert report.mask_buildings
        assert report.row("nearest").n_items == 2


@pytest.mark.slow
class TestDeskScale:
    """Desk-scale training and the method ordering (16 -> 64, ~1k pairs, T = 200)."""

    @pytest.fixture(scope="class")
    def desk_run(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("desk")
        config = get_default_config()
        report = pipeline.pipeline_smoke(config, out)
        losses = [row[1] for row in LossLog(out / "train" / "loss.csv").read()]
        return report, losses, config

    def test_loss_halves(self, desk_run):
        """The smoothed loss ends below half of its starting value and stays finite."""
        _, losses, config = desk_run
        assert all(np.isfinite(losses))
        smoothing = config.optimizer.loss_smoothing
        smoothed = [losses[0]]
        for value in losses[1:]:
            smoothed.append(smoothing * smoothed[-1] + (1.0 - smoothing) * value)
        assert smoothed[-1] < 0.5 * smoothed[0]

    def test_cdiff_beats_nearest(self, desk_run):
        report, _, _ = desk_run
        cdiff, nearest = report.row("cdiff"), report.row("nearest")
        assert cdiff.nmse <= nearest.nmse
        assert cdiff.ssim >= nearest.ssim


class TestDegrade:
    """Tests for run_degrade."""

    def test_decimates_hr_rasters(self, smoke_run, tmp_path):
        out, _ = smoke_run
        hr_dir = tmp_path / "hr"
        hr_dir.mkdir()
        for path in (out / "data" / "pairs").glob("*_hr.png"):
            shutil.copy(path, hr_dir / path.name)
        dataset = pipeline.run_degrade(get_smoke_config(), hr_dir, tmp_path / "pairs")
        assert len(dataset) == len(list(hr_dir.glob("*.png")))
        assert dataset.factor == 4
        for pair in dataset.pairs:
            np.testing.assert_array_equal(pair.lr.pixels, pair.hr.pixels[::4, ::4])
        assert read_manifest(tmp_path / "pairs").complete

    def test_empty_directory(self, tmp_path):
        (tmp_path / "hr").mkdir()
        with pytest.raises(DataError):
            pipeline.run_degrade(get_smoke_config(), tmp_path / "hr", tmp_path / "out")
        assert (tmp_path / "out" / INCOMPLETE_MARKER).exists()
