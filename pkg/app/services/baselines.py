"""
Classical LR -> HR reconstruction baselines: nearest, bilinear, ordinary
kriging and radial basis functions.

Alignment conventions:
- nearest, kriging and rbf place LR sample (i, j) at HR cell (i·factor,
  j·factor), the cell the decimation downsampler read it from;
- bilinear uses the usual half-pixel image convention (LR pixel centers at
  HR coordinate (i + 0.5)·factor - 0.5, borders clamped).
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
import scipy.linalg
import torch
import torch.nn.functional as F
from scipy.interpolate import RBFInterpolator
from scipy.linalg import LinAlgWarning
from scipy.optimize import least_squares
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist
from scipy.special import xlogy

from app.config.run_config import RbfConfig, VariogramConfig
from app.errors import InvalidArgumentError
from app.models.rasters import EnvCF, GridSpec, RoleTag

logger = logging.getLogger(__name__)

METHODS = ("nearest", "bilinear", "kriging", "rbf")


def _check_factor(factor: int) -> int:
    if int(factor) != factor or factor < 1:
        raise InvalidArgumentError(f"factor must be a positive integer, got {factor}")
    return int(factor)


def _to_hr(f_lr: EnvCF, pixels: np.ndarray, factor: int) -> EnvCF:
    bs_cell = None
    if f_lr.bs_cell is not None:
        bs_cell = (f_lr.bs_cell[0] * factor, f_lr.bs_cell[1] * factor)
    return EnvCF(
        grid=GridSpec(area_side_m=f_lr.grid.area_side_m, resolution=f_lr.resolution * factor),
        pixels=np.clip(pixels, 0.0, 1.0),
        role=RoleTag.HR,
        bs_cell=bs_cell,
        min_db=f_lr.min_db,
        max_db=f_lr.max_db,
    )


def sample_sites(lr_resolution: int, factor: int, hr_cell_m: float) -> np.ndarray:
    """Metric coordinates of the LR samples, (lr_res², 2), row-major."""
    idx = np.arange(lr_resolution) * factor * hr_cell_m
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    return np.column_stack([ii.ravel(), jj.ravel()])


def target_sites(hr_resolution: int, hr_cell_m: float) -> np.ndarray:
    idx = np.arange(hr_resolution) * hr_cell_m
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    return np.column_stack([ii.ravel(), jj.ravel()])


# ============================================================================
# Nearest and bilinear
# ============================================================================

def nearest_resize(values: np.ndarray, factor: int) -> np.ndarray:
    """HR (r, c) copies LR (r // factor, c // factor)."""
    factor = _check_factor(factor)
    return np.repeat(np.repeat(np.asarray(values, dtype=np.float64), factor, axis=0), factor, axis=1)


def nearest_upsample(f_lr: EnvCF, factor: int) -> EnvCF:
    return _to_hr(f_lr, nearest_resize(f_lr.pixels, factor), factor)


def bilinear_resize(values: np.ndarray, factor: int) -> np.ndarray:
    """Separable linear interpolation with half-pixel centers (any 2-D shape)."""
    factor = _check_factor(factor)
    # torch.from_numpy needs a writable buffer; EnvCF pixels are frozen
    values = np.array(values, dtype=np.float64, copy=True)
    if factor == 1:
        return values
    x = torch.from_numpy(values)[None, None]
    out = F.interpolate(x, scale_factor=factor, mode="bilinear", align_corners=False)
    return out[0, 0].numpy()


def bilinear_upsample(f_lr: EnvCF, factor: int) -> EnvCF:
    return _to_hr(f_lr, bilinear_resize(f_lr.pixels, factor), factor)


# ============================================================================
# Ordinary kriging
# ============================================================================

@dataclass(frozen=True)
class ExponentialVariogram:
    """gamma(h) = nugget + sill·(1 - exp(-h / range_m)) for h > 0, gamma(0) = 0."""
    sill: float
    range_m: float
    nugget: float = 0.0

    def __call__(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=np.float64)
        value = self.nugget + self.sill * (1.0 - np.exp(-h / self.range_m))
        return np.where(h > 0.0, value, 0.0)

    def with_extra_nugget(self, extra: float) -> "ExponentialVariogram":
        return ExponentialVariogram(self.sill, self.range_m, self.nugget + extra)


@dataclass
class KrigingDiagnostics:
    """How a kriging prediction was obtained."""
    mode: str
    variogram: Optional[ExponentialVariogram] = None
    lags: list = field(default_factory=list)
    semivariance: list = field(default_factory=list)
    nugget_added: float = 0.0
    retries: int = 0


def empirical_variogram(
    points: np.ndarray,
    values: np.ndarray,
    n_lags: int,
    max_lag: float,
    max_pairs: int = 200_000,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Binned semivariance 0.5·mean((z_i - z_j)^2) over equal-width lag bins."""
    n = len(points)
    if n * (n - 1) // 2 <= max_pairs:
        dist = pdist(points)
        iu, ju = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        iu = rng.integers(0, n, size=max_pairs)
        ju = rng.integers(0, n, size=max_pairs)
        keep = iu != ju
        iu, ju = iu[keep], ju[keep]
        dist = np.linalg.norm(points[iu] - points[ju], axis=1)
    gamma = 0.5 * (values[iu] - values[ju]) ** 2

    edges = np.linspace(0.0, max_lag, n_lags + 1)
    which = np.digitize(dist, edges[1:-1])
    in_range = dist <= max_lag
    lags, semivariance = [], []
    for b in range(n_lags):
        mask = in_range & (which == b)
        if mask.any():
            lags.append(dist[mask].mean())
            semivariance.append(gamma[mask].mean())
    return np.asarray(lags), np.asarray(semivariance)


def fit_variogram(points: np.ndarray, values: np.ndarray, cfg: VariogramConfig) -> tuple[ExponentialVariogram, np.ndarray, np.ndarray]:
    """
    Least-squares fit of the exponential model to the binned empirical
    semivariances. `cfg.fit_loss` "linear" minimizes the plain sum of
    squared residuals; "soft_l1" damps outlying bins. Fixed sill/range in
    `cfg` are kept as given.
    """
    extent = float(np.max(np.ptp(points, axis=0))) if len(points) > 1 else 1.0
    max_lag = max(cfg.max_lag_fraction * extent * np.sqrt(2.0), 1e-12)
    lags, semivariance = empirical_variogram(points, values, cfg.n_lags, max_lag, cfg.max_pairs)
    if len(lags) == 0:
        return ExponentialVariogram(cfg.sill or 0.0, cfg.range_m or max_lag, cfg.nugget), lags, semivariance

    top = float(semivariance.max())
    guess = {
        "sill": cfg.sill if cfg.sill is not None else max(top, 1e-12),
        "range_m": cfg.range_m if cfg.range_m is not None else 0.25 * max_lag,
        "nugget": cfg.nugget,
    }
    free = [name for name in ("sill", "range_m") if getattr(cfg, name) is None]
    if cfg.fit_nugget:
        free.append("nugget")
    if not free:
        return ExponentialVariogram(**guess), lags, semivariance

    bounds = {
        "sill": (0.0, 10.0 * max(top, 1e-12)),
        "range_m": (1e-6 * max_lag, 10.0 * max_lag),
        "nugget": (0.0, max(top, 1e-12)),
    }

    def residuals(theta: np.ndarray) -> np.ndarray:
        params = dict(guess)
        params.update(zip(free, theta))
        model = ExponentialVariogram(**params)
        return model(lags) - semivariance

    x0 = np.array([np.clip(guess[name], *bounds[name]) for name in free])
    fit = least_squares(
        residuals,
        x0,
        bounds=([bounds[n][0] for n in free], [bounds[n][1] for n in free]),
        loss=cfg.fit_loss,
    )
    guess.update(zip(free, fit.x))
    return ExponentialVariogram(**guess), lags, semivariance


def kriging_matrix(points: np.ndarray, variogram: ExponentialVariogram) -> np.ndarray:
    """Ordinary kriging system [[Gamma, 1], [1^T, 0]]."""
    n = len(points)
    a = np.zeros((n + 1, n + 1))
    a[:n, :n] = variogram(cdist(points, points))
    a[n, :n] = 1.0
    a[:n, n] = 1.0
    return a


def ordinary_kriging_weights(
    points: np.ndarray,
    targets: np.ndarray,
    variogram: ExponentialVariogram,
) -> tuple[np.ndarray, np.ndarray]:
    """Kriging weights (n, m) and Lagrange multipliers (m,) for every target."""
    n = len(points)
    rhs = np.ones((n + 1, len(targets)))
    rhs[:n] = variogram(cdist(points, targets))
    with warnings.catch_warnings():
        warnings.simplefilter("error", LinAlgWarning)
        solution = scipy.linalg.solve(kriging_matrix(points, variogram), rhs)
    return solution[:n], solution[n]


def _factor_with_ladder(points: np.ndarray, variogram: ExponentialVariogram, cfg: VariogramConfig, diag: KrigingDiagnostics):
    """LU-factor the kriging matrix, adding nugget from the ladder while it is singular."""
    ladder = (0.0, *cfg.nugget_ladder)
    for extra in ladder:
        model = variogram.with_extra_nugget(extra)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", LinAlgWarning)
                lu = scipy.linalg.lu_factor(kriging_matrix(points, model))
        except (LinAlgWarning, np.linalg.LinAlgError, ValueError):
            diag.retries += 1
            logger.warning(f"Kriging matrix singular with extra nugget {extra:g}; retrying")
            continue
        diag.nugget_added = extra
        diag.variogram = model
        return lu, model
    raise np.linalg.LinAlgError("kriging matrix stays singular across the nugget ladder")


def ordinary_kriging(
    points: np.ndarray,
    values: np.ndarray,
    targets: np.ndarray,
    cfg: VariogramConfig,
    variogram: Optional[ExponentialVariogram] = None,
) -> tuple[np.ndarray, KrigingDiagnostics]:
    """
    Ordinary kriging prediction at `targets`.

    Dense mode factors the full system once and reuses it for all targets;
    local mode (cfg.neighbors, or more than cfg.dense_max_points samples)
    krige each target from its k nearest samples.
    """
    points = np.asarray(points, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(np.unique(points, axis=0)) < 2:
        raise InvalidArgumentError("kriging needs at least 2 distinct sample sites")
    if np.ptp(values) == 0.0:
        return np.full(len(targets), values[0]), KrigingDiagnostics(mode="constant")

    lags = semivariance = np.empty(0)
    if variogram is None:
        variogram, lags, semivariance = fit_variogram(points, values, cfg)
    diag = KrigingDiagnostics(
        mode="dense",
        variogram=variogram,
        lags=[float(v) for v in lags],
        semivariance=[float(v) for v in semivariance],
    )

    neighbors = cfg.neighbors
    if neighbors is None and len(points) > cfg.dense_max_points:
        neighbors = 32
    if neighbors is None or neighbors >= len(points):
        lu, model = _factor_with_ladder(points, variogram, cfg, diag)
        out = np.empty(len(targets))
        n = len(points)
        for start in range(0, len(targets), cfg.chunk_size):
            chunk = targets[start:start + cfg.chunk_size]
            rhs = np.ones((n + 1, len(chunk)))
            rhs[:n] = model(cdist(points, chunk))
            weights = scipy.linalg.lu_solve(lu, rhs)[:n]
            out[start:start + cfg.chunk_size] = values @ weights
        return out, diag

    diag.mode = "local"
    _, nearest = cKDTree(points).query(targets, k=neighbors)
    local_points = points[nearest]
    k = neighbors
    for extra in (0.0, *cfg.nugget_ladder):
        model = variogram.with_extra_nugget(extra)
        a = np.zeros((len(targets), k + 1, k + 1))
        diffs = local_points[:, :, None, :] - local_points[:, None, :, :]
        a[:, :k, :k] = model(np.linalg.norm(diffs, axis=-1))
        a[:, k, :k] = 1.0
        a[:, :k, k] = 1.0
        rhs = np.ones((len(targets), k + 1))
        rhs[:, :k] = model(np.linalg.norm(local_points - targets[:, None, :], axis=-1))
        try:
            solution = np.linalg.solve(a, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            diag.retries += 1
            logger.warning(f"Local kriging system singular with extra nugget {extra:g}; retrying")
            continue
        diag.nugget_added = extra
        diag.variogram = model
        return np.einsum("mk,mk->m", solution[:, :k], values[nearest]), diag
    raise np.linalg.LinAlgError("local kriging systems stay singular across the nugget ladder")


def kriging_interpolate(
    f_lr: EnvCF,
    factor: int,
    cfg: Optional[VariogramConfig] = None,
) -> tuple[EnvCF, KrigingDiagnostics]:
    """Ordinary-kriging upsampling plus the fit/solve diagnostics."""
    factor = _check_factor(factor)
    cfg = cfg or VariogramConfig()
    hr_res = f_lr.resolution * factor
    hr_cell = f_lr.grid.area_side_m / hr_res
    points = sample_sites(f_lr.resolution, factor, hr_cell)
    targets = target_sites(hr_res, hr_cell)
    values, diag = ordinary_kriging(points, f_lr.pixels.ravel(), targets, cfg)
    if diag.retries:
        logger.warning(f"Kriging needed {diag.retries} nugget retries (extra nugget {diag.nugget_added:g})")
    return _to_hr(f_lr, values.reshape(hr_res, hr_res), factor), diag


def kriging_upsample(f_lr: EnvCF, factor: int, cfg: Optional[VariogramConfig] = None) -> EnvCF:
    return kriging_interpolate(f_lr, factor, cfg)[0]


# ============================================================================
# Radial basis functions
# ============================================================================

@dataclass
class RbfDiagnostics:
    smoothing: float
    retries: int = 0
    condition: float = float("nan")


# Kernels as scipy's RBFInterpolator defines them, on r = epsilon * distance
RBF_KERNELS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "multiquadric": lambda r: -np.sqrt(r**2 + 1.0),
    "inverse_multiquadric": lambda r: 1.0 / np.sqrt(r**2 + 1.0),
    "gaussian": lambda r: np.exp(-(r**2)),
    "thin_plate_spline": lambda r: xlogy(r**2, r),
}


def _polynomial_block(points: np.ndarray, degree: int) -> np.ndarray:
    """Monomials of degree <= `degree` over the points shifted and scaled to [-1, 1]."""
    if degree < 0:
        return np.zeros((len(points), 0))
    if degree == 0:
        return np.ones((len(points), 1))
    lo, hi = points.min(axis=0), points.max(axis=0)
    scale = np.where(hi > lo, (hi - lo) / 2.0, 1.0)
    return np.column_stack([np.ones(len(points)), (points - (hi + lo) / 2.0) / scale])


def rbf_condition(
    points: np.ndarray,
    kernel: str,
    epsilon: float,
    smoothing: float,
    degree: int,
) -> float:
    """
    Estimated 1-norm condition number of the augmented RBF system
    [[Phi + smoothing·I, P], [P^T, 0]]; inf when it is singular.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    poly = _polynomial_block(points, degree)
    m = poly.shape[1]
    a = np.zeros((n + m, n + m))
    a[:n, :n] = RBF_KERNELS[kernel](epsilon * cdist(points, points))
    a[np.arange(n), np.arange(n)] += smoothing
    a[:n, n:] = poly
    a[n:, :n] = poly.T
    if not np.all(np.isfinite(a)):
        return float("inf")
    with warnings.catch_warnings():
        # exact zero pivots only warn; dgecon then reports rcond 0
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, _ = scipy.linalg.lu_factor(a, check_finite=False)
    rcond, info = scipy.linalg.lapack.dgecon(lu, np.linalg.norm(a, 1), norm="1")
    if info != 0 or not rcond > 0.0:
        return float("inf")
    return 1.0 / float(rcond)


def rbf_interpolate(
    points: np.ndarray,
    values: np.ndarray,
    targets: np.ndarray,
    kernel: str = "multiquadric",
    epsilon: float = 1.0,
    smoothing: float = 0.0,
    degree: int = 0,
    neighbors: Optional[int] = None,
    ladder: tuple[float, ...] = (),
    max_condition: Optional[float] = 1e12,
) -> tuple[np.ndarray, RbfDiagnostics]:
    """
    Evaluate the RBF interpolant of (points, values) at targets.

    In dense mode every smoothing value is screened first: a system whose
    estimated condition number exceeds `max_condition` (or that scipy
    reports singular) is retried with the next larger smoothing of the
    ladder. Local systems (`neighbors` set) are only retried on a
    LinAlgError. A single sample gives a constant field.
    """
    points = np.asarray(points, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(points) == 1:
        return np.full(len(targets), values[0]), RbfDiagnostics(smoothing=smoothing)
    if kernel not in RBF_KERNELS:
        raise InvalidArgumentError(f"unknown RBF kernel {kernel!r}; choose from {', '.join(RBF_KERNELS)}")

    screen = max_condition is not None and neighbors is None
    candidates = [smoothing] + [s for s in ladder if s > smoothing]
    for retries, lam in enumerate(candidates):
        condition = float("nan")
        if screen:
            condition = rbf_condition(points, kernel, epsilon, lam, degree)
            if condition > max_condition:
                logger.warning(
                    f"RBF system ill-conditioned with smoothing {lam:g} "
                    f"(condition {condition:.3g} > {max_condition:.3g}); increasing regularization"
                )
                continue
        try:
            with warnings.catch_warnings():
                # thin_plate_spline with degree < 1 only warns
                warnings.simplefilter("ignore", UserWarning)
                interpolant = RBFInterpolator(
                    points,
                    values,
                    kernel=kernel,
                    epsilon=epsilon,
                    smoothing=lam,
                    degree=degree,
                    neighbors=neighbors,
                )
            diag = RbfDiagnostics(smoothing=lam, retries=retries, condition=condition)
            return interpolant(targets), diag
        except np.linalg.LinAlgError:
            logger.warning(f"RBF system singular with smoothing {lam:g}; increasing regularization")
    raise np.linalg.LinAlgError("RBF system stays singular or ill-conditioned across the smoothing ladder")


def rbf_upsample(f_lr: EnvCF, factor: int, cfg: Optional[RbfConfig] = None) -> EnvCF:
    """
    RBF upsampling. The multiquadric kernel sqrt(r² + c²) is used with
    scipy's shape parameter epsilon = 1/c; c defaults to the LR spacing.

    The default tail is a constant (degree 0), so the weights solve the
    augmented system with a sum-to-zero constraint instead of the bare
    (Phi + lambda·I) w = f. degree=-1 gives the bare system.
    """
    factor = _check_factor(factor)
    cfg = cfg or RbfConfig()
    hr_res = f_lr.resolution * factor
    hr_cell = f_lr.grid.area_side_m / hr_res
    shape = cfg.shape_m if cfg.shape_m is not None else factor * hr_cell
    values, diag = rbf_interpolate(
        sample_sites(f_lr.resolution, factor, hr_cell),
        f_lr.pixels.ravel(),
        target_sites(hr_res, hr_cell),
        kernel=cfg.kernel,
        epsilon=1.0 / shape,
        smoothing=cfg.smoothing,
        degree=cfg.degree,
        neighbors=cfg.neighbors,
        ladder=cfg.smoothing_ladder,
        max_condition=cfg.max_condition,
    )
    if diag.retries:
        logger.warning(f"RBF needed {diag.retries} regularization retries (smoothing {diag.smoothing:g})")
    return _to_hr(f_lr, values.reshape(hr_res, hr_res), factor)


UPSAMPLERS: Dict[str, Callable[..., EnvCF]] = {
    "nearest": nearest_upsample,
    "bilinear": bilinear_upsample,
    "kriging": kriging_upsample,
    "rbf": rbf_upsample,
}


def upsample(
    method: str,
    f_lr: EnvCF,
    factor: int,
    kriging: Optional[VariogramConfig] = None,
    rbf: Optional[RbfConfig] = None,
) -> EnvCF:
    """Dispatch to one of the baseline upsamplers by name."""
    if method == "kriging":
        return kriging_upsample(f_lr, factor, kriging)
    if method == "rbf":
        return rbf_upsample(f_lr, factor, rbf)
    if method not in UPSAMPLERS:
        raise InvalidArgumentError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    return UPSAMPLERS[method](f_lr, factor)
