"""
Synthetic urban radio-map generator.

Cities are axis-aligned rectangular buildings on a square grid with one
base station (BS) on an open cell. Channel gain follows a log-distance
path-loss law anchored at the free-space loss at d0, plus a fixed
penetration loss for every building cell strictly crossed by the integer
ray from the BS cell to the target cell.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.constants import speed_of_light

from app.config.run_config import CityParams, SimulatorConfig
from app.errors import GenerationError, InvalidArgumentError
from app.models.rasters import ChannelGainMap, EnvCF, EnvironmentMap, GridSpec, RoleTag
from app.services.grid import compose_envcf, downsample, gain_to_gray
from app.services.seeding import derive_seed

logger = logging.getLogger(__name__)

# Half-open cell rectangle: rows r0..r1-1, columns c0..c1-1
Rect = tuple[int, int, int, int]


@dataclass(frozen=True)
class EnvCFPair:
    """One HR/LR training pair and the sub-seed its city was drawn with."""
    index: int
    hr: EnvCF
    lr: EnvCF
    seed: Optional[int] = None


@dataclass
class SyntheticDataset:
    """Ordered HR/LR pairs plus the fixed train/validation split."""
    grid_hr: GridSpec
    factor: int
    pairs: list[EnvCFPair] = field(default_factory=list)
    train_indices: list[int] = field(default_factory=list)
    val_indices: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def train(self) -> list[EnvCFPair]:
        return [self.pairs[i] for i in self.train_indices]

    @property
    def validation(self) -> list[EnvCFPair]:
        return [self.pairs[i] for i in self.val_indices]


def fspl_db(freq_hz: float, distance_m: float) -> float:
    """Free-space path loss 20·log10(4π·d·f/c) in dB."""
    if freq_hz <= 0 or distance_m <= 0:
        raise InvalidArgumentError("frequency and distance must be positive")
    return 20.0 * math.log10(4.0 * math.pi * distance_m * freq_hz / speed_of_light)


def split_indices(n: int, ratio: Sequence[int] = (4, 1)) -> tuple[list[int], list[int]]:
    """Fixed, unshuffled split: the last share of indices is validation."""
    train_share, val_share = ratio
    if train_share < 0 or val_share < 0 or train_share + val_share == 0:
        raise InvalidArgumentError(f"invalid split ratio {tuple(ratio)}")
    n_val = (n * val_share) // (train_share + val_share)
    n_train = n - n_val
    return list(range(n_train)), list(range(n_train, n))


def rasterize_buildings(grid: GridSpec, rects: Iterable[Rect]) -> np.ndarray:
    """Burn half-open cell rectangles into a binary raster (clipped to the grid)."""
    cells = np.zeros((grid.resolution, grid.resolution), dtype=np.uint8)
    for r0, c0, r1, c1 in rects:
        cells[max(r0, 0):max(r1, 0), max(c0, 0):max(c1, 0)] = 1
    return cells


def gen_city(grid: GridSpec, params: CityParams) -> EnvironmentMap:
    """
    Draw a random city: `n_buildings` rectangles with sides drawn from
    `size_range_m`, then a BS uniformly on an open cell.

    Raises:
        GenerationError: every cell is covered by buildings
    """
    rng = np.random.default_rng(params.seed)
    res = grid.resolution
    low_m, high_m = params.size_range_m

    rects: list[Rect] = []
    for _ in range(params.n_buildings):
        h_m, w_m = rng.uniform(low_m, high_m, size=2)
        h = int(min(res, max(1, round(h_m / grid.cell_size_m))))
        w = int(min(res, max(1, round(w_m / grid.cell_size_m))))
        r0 = int(rng.integers(0, res - h + 1))
        c0 = int(rng.integers(0, res - w + 1))
        rects.append((r0, c0, r0 + h, c0 + w))
    cells = rasterize_buildings(grid, rects)

    open_cells = np.argwhere(cells == 0)
    if len(open_cells) == 0:
        raise GenerationError(
            f"no open cell left for the BS ({params.n_buildings} buildings on a {res}x{res} grid, seed {params.seed})"
        )
    i, j = open_cells[rng.integers(len(open_cells))]
    return EnvironmentMap(grid=grid, cells=cells, bs_cell=(int(i), int(j)))


def count_walls(cells: np.ndarray, bs_cell: tuple[int, int]) -> np.ndarray:
    """
    Building cells strictly between the BS and every target cell.

    The ray from BS to target (di, dj) is traversed in N = max(|di|, |dj|)
    unit steps; step k visits bs + round(k·(di, dj)/N) and both endpoints
    are excluded.
    """
    res = cells.shape[0]
    bi, bj = bs_cell
    ii, jj = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    di = ii - bi
    dj = jj - bj
    n_steps = np.maximum(np.abs(di), np.abs(dj))
    safe_steps = np.maximum(n_steps, 1)

    walls = np.zeros((res, res), dtype=np.int64)
    for k in range(1, int(n_steps.max(initial=0))):
        active = k < n_steps
        pi = np.clip(bi + np.floor(k * di / safe_steps + 0.5).astype(np.int64), 0, res - 1)
        pj = np.clip(bj + np.floor(k * dj / safe_steps + 0.5).astype(np.int64), 0, res - 1)
        walls += active & (cells[pi, pj] == 1)
    return walls


def simulate_gain(env: EnvironmentMap, cfg: SimulatorConfig) -> ChannelGainMap:
    """
    Large-scale channel gain of every open cell, in dB and as gray values.

    Building cells carry no coverage (-inf dB, gray 0).
    """
    if env.bs_cell is None:
        raise InvalidArgumentError("simulate_gain needs an environment with a BS cell")
    res = env.grid.resolution
    bi, bj = env.bs_cell
    ii, jj = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    distance = env.grid.cell_size_m * np.hypot(ii - bi, jj - bj)

    d0 = cfg.reference_distance_m
    pathloss = fspl_db(cfg.carrier_freq_hz, d0) + 10.0 * cfg.pathloss_exponent * np.log10(
        np.maximum(distance, d0) / d0
    )
    gain_db = -pathloss - cfg.wall_loss_db * count_walls(env.cells, env.bs_cell)
    gain_db = np.where(env.cells == 1, -np.inf, gain_db)

    return ChannelGainMap(
        grid=env.grid,
        gain_db=gain_db,
        gain_gray=gain_to_gray(gain_db, cfg.min_db, cfg.max_db),
        min_db=cfg.min_db,
        max_db=cfg.max_db,
    )


def make_pair(
    index: int,
    grid_hr: GridSpec,
    factor: int,
    params: CityParams,
    cfg: SimulatorConfig,
    seed: int,
) -> EnvCFPair:
    """Generate pair `index`; its city seed is derived from (seed, index)."""
    sub_seed = derive_seed(seed, index)
    env = gen_city(grid_hr, params.model_copy(update={"seed": sub_seed}))
    hr = compose_envcf(env, simulate_gain(env, cfg), role=RoleTag.HR)
    return EnvCFPair(index=index, hr=hr, lr=downsample(hr, factor), seed=sub_seed)


def gen_dataset(
    n_pairs: int,
    grid_hr: GridSpec,
    factor: int,
    params: CityParams,
    cfg: SimulatorConfig,
    seed: int,
    workers: int = 1,
    split_ratio: Sequence[int] = (4, 1),
) -> SyntheticDataset:
    """
    Generate `n_pairs` independent HR/LR EnvCF pairs.

    Pairs are produced in index order whatever the worker count, so a
    parallel run is byte-identical to a serial one.
    """
    if n_pairs < 0:
        raise InvalidArgumentError(f"n_pairs must be >= 0, got {n_pairs}")
    if factor < 1 or grid_hr.resolution % factor:
        raise InvalidArgumentError(
            f"factor {factor} does not divide HR resolution {grid_hr.resolution}"
        )

    indices = list(range(n_pairs))
    args = (
        indices,
        [grid_hr] * n_pairs,
        [factor] * n_pairs,
        [params] * n_pairs,
        [cfg] * n_pairs,
        [seed] * n_pairs,
    )
    if workers > 1 and n_pairs > 1:
        chunksize = max(1, n_pairs // (4 * workers))
        with ProcessPoolExecutor(max_workers=workers) as executor:
            pairs = list(executor.map(make_pair, *args, chunksize=chunksize))
    else:
        pairs = [make_pair(*a) for a in zip(*args)]

    train, val = split_indices(n_pairs, split_ratio)
    logger.info(
        f"Generated {n_pairs} pairs at {grid_hr.resolution}x{grid_hr.resolution} "
        f"(factor {factor}, {len(train)} train / {len(val)} validation, workers={workers})"
    )
    return SyntheticDataset(
        grid_hr=grid_hr,
        factor=factor,
        pairs=pairs,
        train_indices=train,
        val_indices=val,
    )
