"""Tests for the synthetic city and channel gain generator."""

import math

import numpy as np
import pytest
from scipy.constants import speed_of_light

from app.config import CityParams, SimulatorConfig
from app.errors import GenerationError, InvalidArgumentError
from app.models import EnvironmentMap, RoleTag
from app.services.grid import make_grid
from app.services.synth import (
    count_walls,
    fspl_db,
    gen_city,
    gen_dataset,
    make_pair,
    rasterize_buildings,
    simulate_gain,
    split_indices,
)


@pytest.fixture
def grid():
    return make_grid(64.0, 16)


@pytest.fixture
def city():
    return CityParams(n_buildings=3, size_range_m=(8.0, 20.0), seed=0)


class TestFsplDb:
    """Tests for free-space path loss."""

    def test_reference_value(self):
        """FSPL at 1 m matches 20·log10(4π f / c)."""
        expected = 20.0 * math.log10(4.0 * math.pi * 5.9e9 / speed_of_light)
        assert fspl_db(5.9e9, 1.0) == pytest.approx(expected)
        assert fspl_db(5.9e9, 1.0) == pytest.approx(47.86, abs=0.01)

    def test_doubling_distance(self):
        """Doubling the distance adds 20·log10(2) dB."""
        assert fspl_db(5.9e9, 20.0) - fspl_db(5.9e9, 10.0) == pytest.approx(20.0 * math.log10(2.0))

    def test_invalid(self):
        """Non-positive distance is rejected."""
        with pytest.raises(InvalidArgumentError):
            fspl_db(5.9e9, 0.0)


class TestSplitIndices:
    """Tests for the fixed train/validation split."""

    def test_four_to_one(self):
        """The last 20% by index is validation."""
        train, val = split_indices(10)
        assert train == list(range(8))
        assert val == [8, 9]

    def test_desk_size(self):
        """1000 pairs split 800/200."""
        train, val = split_indices(1000)
        assert len(train) == 800 and len(val) == 200
        assert val[0] == 800

    def test_empty(self):
        """Zero pairs gives two empty splits."""
        assert split_indices(0) == ([], [])


class TestGenCity:
    """Tests for gen_city and rasterize_buildings."""

    def test_half_open_rectangles(self, grid):
        """Rectangles cover rows r0..r1-1 and columns c0..c1-1."""
        cells = rasterize_buildings(grid, [(1, 2, 3, 5)])
        assert cells.sum() == 2 * 3
        assert cells[1, 2] == 1 and cells[2, 4] == 1
        assert cells[3, 2] == 0 and cells[1, 5] == 0

    def test_deterministic(self, grid, city):
        """The same seed gives the same city."""
        a = gen_city(grid, city)
        b = gen_city(grid, city)
        np.testing.assert_array_equal(a.cells, b.cells)
        assert a.bs_cell == b.bs_cell

    def test_bs_on_open_cell(self, grid):
        """The BS never lands inside a building."""
        for seed in range(20):
            env = gen_city(grid, CityParams(n_buildings=8, size_range_m=(8.0, 24.0), seed=seed))
            assert env.cells[env.bs_cell] == 0

    def test_fully_built_city(self):
        """A city with no open cell raises GenerationError."""
        grid = make_grid(8.0, 2)
        with pytest.raises(GenerationError):
            gen_city(grid, CityParams(n_buildings=4, size_range_m=(8.0, 8.0), seed=1))


class TestCountWalls:
    """Tests for wall counting along grid rays."""

    def test_single_wall_column(self):
        """A wall column between BS and target counts once; endpoints are excluded."""
        cells = np.zeros((5, 5), dtype=np.uint8)
        cells[:, 2] = 1
        walls = count_walls(cells, (2, 0))
        assert walls[2, 4] == 1
        assert walls[2, 2] == 0
        assert walls[2, 1] == 0
        assert walls[2, 0] == 0

    def test_empty_city(self):
        """No buildings means no walls anywhere."""
        walls = count_walls(np.zeros((6, 6), dtype=np.uint8), (3, 3))
        assert walls.sum() == 0


class TestSimulateGain:
    """Tests for the propagation model."""

    def test_buildings_have_no_coverage(self, grid, city):
        """Building cells are -inf dB and gray 0."""
        env = gen_city(grid, city)
        gain = simulate_gain(env, SimulatorConfig())
        buildings = env.cells == 1
        assert np.all(np.isneginf(gain.gain_db[buildings]))
        assert np.all(gain.gain_gray[buildings] == 0.0)
        assert np.all(np.isfinite(gain.gain_db[~buildings]))

    def test_gain_decreases_with_distance(self, grid):
        """In an empty city the gain falls monotonically along a row from the BS."""
        env = EnvironmentMap(grid=grid, cells=np.zeros((16, 16), dtype=np.uint8), bs_cell=(0, 0))
        gain = simulate_gain(env, SimulatorConfig())
        row = gain.gain_db[0, 1:]
        assert np.all(np.diff(row) < 0)

    def test_wall_loss(self, grid):
        """A wall between BS and target costs wall_loss_db."""
        cells = np.zeros((16, 16), dtype=np.uint8)
        cells[:, 5] = 1
        cfg = SimulatorConfig(wall_loss_db=10.0)
        open_gain = simulate_gain(EnvironmentMap(grid=grid, cells=np.zeros_like(cells), bs_cell=(0, 0)), cfg)
        walled_gain = simulate_gain(EnvironmentMap(grid=grid, cells=cells, bs_cell=(0, 0)), cfg)
        assert walled_gain.gain_db[0, 10] == pytest.approx(open_gain.gain_db[0, 10] - 10.0)

    def test_link_budget(self, grid, city):
        """SNR = P_tx + G - (N0 + 10·log10 B)."""
        cfg = SimulatorConfig()
        env = gen_city(grid, city)
        gain = simulate_gain(env, cfg)
        open_cell = tuple(np.argwhere(env.cells == 0)[0])
        snr = gain.snr_db(cfg.tx_power_dbm, cfg.noise_power_dbm)
        expected = cfg.tx_power_dbm + gain.gain_db[open_cell] - (-174.0 + 70.0)
        assert snr[open_cell] == pytest.approx(expected)


class TestGenDataset:
    """Tests for dataset generation."""

    def test_pair_shapes(self, grid, city):
        """Pairs hold HR and decimated LR rasters."""
        pair = make_pair(0, grid, 4, city, SimulatorConfig(), seed=7)
        assert pair.hr.resolution == 16 and pair.lr.resolution == 4
        assert pair.hr.role == RoleTag.HR and pair.lr.role == RoleTag.LR
        np.testing.assert_array_equal(pair.lr.pixels, pair.hr.pixels[::4, ::4])

    def test_deterministic(self, grid, city):
        """Two runs with the same seed give identical datasets."""
        a = gen_dataset(5, grid, 4, city, SimulatorConfig(), seed=7)
        b = gen_dataset(5, grid, 4, city, SimulatorConfig(), seed=7)
        assert [p.hr for p in a.pairs] == [p.hr for p in b.pairs]
        assert [p.seed for p in a.pairs] == [p.seed for p in b.pairs]

    def test_parallel_matches_serial(self, grid, city):
        """Worker count never changes the generated pairs."""
        serial = gen_dataset(4, grid, 4, city, SimulatorConfig(), seed=3, workers=1)
        parallel = gen_dataset(4, grid, 4, city, SimulatorConfig(), seed=3, workers=2)
        assert [p.hr for p in serial.pairs] == [p.hr for p in parallel.pairs]

    def test_pairs_differ(self, grid, city):
        """Different indices draw different cities."""
        dataset = gen_dataset(3, grid, 4, city, SimulatorConfig(), seed=7)
        assert dataset.pairs[0].hr != dataset.pairs[1].hr

    def test_split(self, grid, city):
        """The dataset carries the fixed 4:1 split."""
        dataset = gen_dataset(5, grid, 4, city, SimulatorConfig(), seed=7)
        assert dataset.train_indices == [0, 1, 2, 3]
        assert dataset.val_indices == [4]
        assert len(dataset.validation) == 1

    def test_factor_must_divide(self, grid, city):
        """A factor that does not divide the HR resolution is rejected."""
        with pytest.raises(InvalidArgumentError):
            gen_dataset(2, grid, 3, city, SimulatorConfig(), seed=7)
