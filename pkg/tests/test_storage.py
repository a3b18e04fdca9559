"""Tests for raster, dataset, checkpoint and manifest I/O."""

import json

import numpy as np
import pytest
import torch
from PIL import Image

from app.config import DenoiserDescriptor, OptimizerConfig, get_smoke_config
from app.errors import CheckpointError, DataError, ShapeError
from app.models import EnvCF, GridSpec, RoleTag
from app.services.denoiser import TrainState, init_params
from app.services.grid import make_grid
from app.services.schedule import linear_schedule
from app.services.storage import (
    INCOMPLETE_MARKER,
    LossLog,
    list_rasters,
    load_checkpoint,
    load_dataset,
    load_model,
    read_envcf,
    read_manifest,
    run_manifest,
    save_checkpoint,
    save_dataset,
    write_envcf,
)
from app.services.synth import gen_dataset


@pytest.fixture
def envcf():
    pixels = np.round(np.random.default_rng(0).uniform(size=(8, 8)) * 255) / 255
    return EnvCF(grid=GridSpec(area_side_m=32.0, resolution=8), pixels=pixels, bs_cell=(2, 3))


@pytest.fixture
def descriptor():
    return DenoiserDescriptor(base_channels=4, levels=2, kernel_size=3, time_dim=8, norm_groups=2)


@pytest.fixture
def state(descriptor):
    return TrainState.create(init_params(descriptor, seed=0), OptimizerConfig(lr=1e-3, grad_clip=1.0))


class TestRasters:
    """Tests for PNG rasters and their sidecars."""

    def test_round_trip_with_sidecar(self, envcf, tmp_path):
        """8-bit values and metadata survive a write/read cycle."""
        path = write_envcf(tmp_path / "a.png", envcf)
        loaded = read_envcf(path)
        assert loaded == envcf
        assert loaded.grid.area_side_m == 32.0
        assert json.loads((tmp_path / "a.json").read_text())["bs_cell"] == [2, 3]

    def test_without_sidecar(self, envcf, tmp_path):
        """Without a sidecar the caller's area (or 1 m cells) is used."""
        path = tmp_path / "bare.png"
        Image.fromarray(np.round(envcf.pixels * 255).astype(np.uint8)).save(path)
        assert read_envcf(path).grid.area_side_m == 8.0
        loaded = read_envcf(path, area_side_m=64.0, role=RoleTag.LR)
        assert loaded.grid.area_side_m == 64.0
        assert loaded.role == RoleTag.LR
        assert loaded.bs_cell is None

    def test_rgb_is_converted(self, tmp_path):
        path = tmp_path / "rgb.png"
        Image.fromarray(np.full((4, 4, 3), 255, dtype=np.uint8)).save(path)
        np.testing.assert_allclose(read_envcf(path).pixels, 1.0)

    def test_sixteen_bit(self, tmp_path):
        path = tmp_path / "deep.png"
        Image.fromarray(np.full((4, 4), 65535, dtype=np.uint16)).save(path)
        np.testing.assert_allclose(read_envcf(path).pixels, 1.0)

    def test_non_square(self, tmp_path):
        path = tmp_path / "wide.png"
        Image.fromarray(np.zeros((4, 6), dtype=np.uint8)).save(path)
        with pytest.raises(ShapeError):
            read_envcf(path)

    def test_missing_and_unreadable(self, tmp_path):
        with pytest.raises(DataError):
            read_envcf(tmp_path / "absent.png")
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not a png")
        with pytest.raises(DataError):
            read_envcf(bad)

    def test_list_rasters(self, envcf, tmp_path):
        write_envcf(tmp_path / "b.png", envcf)
        write_envcf(tmp_path / "a.png", envcf)
        assert [p.name for p in list_rasters(tmp_path)] == ["a.png", "b.png"]
        with pytest.raises(DataError):
            list_rasters(tmp_path / "nowhere")


class TestDatasets:
    """Tests for dataset trees."""

    @pytest.fixture
    def dataset(self):
        config = get_smoke_config()
        return gen_dataset(
            5,
            make_grid(config.grid.area_side_m, config.grid.hr_resolution),
            config.grid.factor,
            config.city,
            config.simulator,
            seed=3,
        )

    def test_save_and_load(self, dataset, tmp_path):
        config = get_smoke_config()
        save_dataset(dataset, tmp_path, config)
        loaded = load_dataset(tmp_path)
        assert len(loaded) == 5
        assert loaded.factor == 4
        assert loaded.train_indices == dataset.train_indices
        assert loaded.val_indices == dataset.val_indices
        assert [p.seed for p in loaded.pairs] == [p.seed for p in dataset.pairs]
        for a, b in zip(loaded.pairs, dataset.pairs):
            np.testing.assert_allclose(a.hr.pixels, b.hr.pixels, atol=0.5 / 255 + 1e-12)
            assert a.lr.role == RoleTag.LR
        meta = json.loads((tmp_path / "meta.json").read_text())
        assert meta["config_hash"] == config.config_hash()

    def test_missing_lr_is_derived(self, dataset, tmp_path):
        """LR rasters absent from the tree are decimated from HR."""
        save_dataset(dataset, tmp_path)
        for path in (tmp_path / "pairs").glob("*_lr.*"):
            path.unlink()
        (tmp_path / "meta.json").unlink()
        loaded = load_dataset(tmp_path, factor=4)
        np.testing.assert_array_equal(loaded.pairs[0].lr.pixels, loaded.pairs[0].hr.pixels[::4, ::4])
        with pytest.raises(DataError):
            load_dataset(tmp_path)

    def test_missing_tree(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path)
        (tmp_path / "pairs").mkdir()
        with pytest.raises(DataError):
            load_dataset(tmp_path)


class TestCheckpoints:
    """Tests for checkpoint files."""

    def test_round_trip(self, state, descriptor, tmp_path):
        schedule = linear_schedule(10, 1e-4, 0.1)
        state.step = 7
        path = save_checkpoint(tmp_path / "ckpt.pt", state, schedule, config_hash="h")
        loaded = load_checkpoint(path, descriptor, schedule)
        assert loaded.state.step == 7
        assert loaded.config_hash == "h"
        assert loaded.state.grad_clip == 1.0
        assert loaded.schedule_params == schedule.params()
        for name, value in state.model.state_dict().items():
            assert torch.equal(loaded.state.model.state_dict()[name], value)
        assert not (tmp_path / "ckpt.pt.tmp").exists()

    def test_load_model_is_eval(self, state, tmp_path):
        schedule = linear_schedule(10, 1e-4, 0.1)
        path = save_checkpoint(tmp_path / "ckpt.pt", state, schedule)
        assert not load_model(path).training

    def test_descriptor_mismatch(self, state, tmp_path):
        schedule = linear_schedule(10, 1e-4, 0.1)
        path = save_checkpoint(tmp_path / "ckpt.pt", state, schedule)
        other = DenoiserDescriptor(base_channels=8, levels=2, kernel_size=3, time_dim=8, norm_groups=2)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, other)

    def test_schedule_mismatch(self, state, tmp_path):
        path = save_checkpoint(tmp_path / "ckpt.pt", state, linear_schedule(10, 1e-4, 0.1))
        with pytest.raises(CheckpointError):
            load_checkpoint(path, schedule=linear_schedule(20, 1e-4, 0.1))

    def test_unreadable(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.pt")
        bad = tmp_path / "bad.pt"
        bad.write_bytes(b"garbage")
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)


class TestLossLog:
    def test_append_and_read(self, tmp_path):
        log = LossLog(tmp_path / "loss.csv")
        log.append([(1, 0.5, 0.01), (2, 0.25, 0.02)])
        log.append([(3, 0.125, 0.03)])
        assert log.read() == [(1, 0.5, 0.01), (2, 0.25, 0.02), (3, 0.125, 0.03)]


class TestRunManifest:
    """Tests for run manifests."""

    def test_success(self, tmp_path):
        config = get_smoke_config()
        with run_manifest(tmp_path, "gen-data", config, ["gen-data", "--preset", "smoke"]):
            assert read_manifest(tmp_path).complete is False
        manifest = read_manifest(tmp_path)
        assert manifest.complete
        assert manifest.config_hash == config.config_hash()
        assert manifest.seeds == config.seeds.model_dump()
        assert manifest.argv == ["gen-data", "--preset", "smoke"]
        assert "numpy" in manifest.versions
        assert not (tmp_path / INCOMPLETE_MARKER).exists()

    def test_failure_leaves_marker(self, tmp_path):
        with pytest.raises(RuntimeError):
            with run_manifest(tmp_path, "train", get_smoke_config()):
                raise RuntimeError("boom")
        manifest = read_manifest(tmp_path)
        assert not manifest.complete
        assert manifest.error == "RuntimeError: boom"
        assert (tmp_path / INCOMPLETE_MARKER).exists()

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            read_manifest(tmp_path)
