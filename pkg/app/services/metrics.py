"""
Reconstruction quality metrics and the method comparison report.

Conventions:
- rasters are compared on the [0, 1] EnvCF scale, PSNR peak 1.0;
- identical rasters score PSNR_CAP_DB instead of +inf;
- SSIM uses an 11x11 Gaussian window (sigma 1.5), C1 = (0.01·peak)²,
  C2 = (0.03·peak)², averaged over the window-valid interior.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from app.config.run_config import SsimConfig
from app.errors import InvalidArgumentError, ShapeError, UndefinedReferenceError
from app.models.rasters import EnvCF

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0
REPORT_COLUMNS = ("method", "psnr_db", "ssim", "nmse", "n_items", "config_hash")
REPORTED_COLUMNS = ("method", "psnr_db", "ssim", "nmse", "status")
REPORTED_STATUS = "reported_not_reproduced"

# Published x4 results at 64 -> 256, kept as context only
REPORTED_ROWS: Dict[str, tuple[float, float, float]] = {
    "bilinear": (27.24, 0.8521, 0.0172),
    "nearest": (26.25, 0.8331, 0.0215),
    "kriging": (19.88, 0.6725, 0.1166),
    "rbf": (26.99, 0.8613, 0.0180),
    "srgan": (29.75, 0.7517, 0.0089),
    "cdiff": (31.15, 0.9280, 0.0073),
}


def _as_array(x) -> np.ndarray:
    if isinstance(x, EnvCF):
        return x.pixels.astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def _pair(x_hat, x) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_array(x_hat), _as_array(x)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(x_hat, x, peak: float = 1.0) -> float:
    """10·log10(peak² / MSE) in dB, capped at PSNR_CAP_DB."""
    a, b = _pair(x_hat, x)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(peak ** 2 / mse), PSNR_CAP_DB))


def ssim(x_hat, x, cfg: Optional[SsimConfig] = None, peak: float = 1.0) -> float:
    """Mean local SSIM with a Gaussian window."""
    cfg = cfg or SsimConfig()
    a, b = _pair(x_hat, x)
    if a.ndim != 2:
        raise ShapeError(f"ssim expects 2-D rasters, got {a.ndim}-D")
    if min(a.shape) < cfg.window_size:
        raise InvalidArgumentError(
            f"raster {a.shape} is smaller than the {cfg.window_size}x{cfg.window_size} SSIM window"
        )

    radius = (cfg.window_size - 1) // 2
    truncate = radius / cfg.sigma

    def blur(img: np.ndarray) -> np.ndarray:
        return gaussian_filter(img, sigma=cfg.sigma, truncate=truncate, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b

    c1 = (cfg.k1 * peak) ** 2
    c2 = (cfg.k2 * peak) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    ssim_map = num / den
    if radius:
        ssim_map = ssim_map[radius:-radius, radius:-radius]
    return float(np.clip(ssim_map.mean(), -1.0, 1.0))


def nmse(x_hat, x) -> float:
    """||x_hat - x||² / ||x||²; the reference must carry energy."""
    a, b = _pair(x_hat, x)
    energy = float(np.sum(b ** 2))
    if energy == 0.0:
        raise UndefinedReferenceError("NMSE is undefined for an all-zero reference")
    return float(np.sum((a - b) ** 2) / energy)


@dataclass
class PairScore:
    psnr_db: float
    ssim: float
    nmse: float


@dataclass
class MethodScore:
    """Mean metrics of one method over the evaluated items."""
    method: str
    psnr_db: float
    ssim: float
    nmse: float
    n_items: int
    per_item: List[PairScore] = field(default_factory=list)


@dataclass
class EvaluationReport:
    rows: List[MethodScore]
    config_hash: str = ""
    mask_buildings: bool = False
    reported: Dict[str, tuple[float, float, float]] = field(default_factory=lambda: dict(REPORTED_ROWS))

    def row(self, method: str) -> MethodScore:
        for row in self.rows:
            if row.method == method:
                return row
        raise KeyError(method)

    def methods(self) -> List[str]:
        return [row.method for row in self.rows]


def score_pair(
    x_hat,
    x,
    ssim_cfg: Optional[SsimConfig] = None,
    mask: Optional[np.ndarray] = None,
) -> PairScore:
    """
    PSNR/SSIM/NMSE of one output against its reference.

    With `mask` (True = scored), PSNR and NMSE only see masked pixels and
    SSIM compares both rasters with the unmasked pixels set to 0.
    """
    a, b = _pair(x_hat, x)
    if mask is None:
        return PairScore(psnr_db=psnr(a, b), ssim=ssim(a, b, ssim_cfg), nmse=nmse(a, b))
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match raster {a.shape}")
    if not mask.any():
        raise UndefinedReferenceError("mask selects no pixels")
    # zero outside the mask so SSIM windows see the same background in both
    a_m, b_m = np.where(mask, a, 0.0), np.where(mask, b, 0.0)
    return PairScore(
        psnr_db=psnr(a[mask], b[mask]),
        ssim=ssim(a_m, b_m, ssim_cfg),
        nmse=nmse(a[mask], b[mask]),
    )


def evaluate(
    outputs: Mapping[str, Sequence[EnvCF]],
    references: Sequence[EnvCF],
    ssim_cfg: Optional[SsimConfig] = None,
    mask_buildings: bool = False,
    config_hash: str = "",
    building_threshold: float = 1.0,
) -> EvaluationReport:
    """
    Mean PSNR/SSIM/NMSE per method over aligned output/reference lists.

    `mask_buildings` scores only pixels the reference marks as street
    (value below `building_threshold`).
    """
    rows = []
    for method, items in outputs.items():
        if len(items) != len(references):
            raise ShapeError(
                f"method {method!r} has {len(items)} outputs for {len(references)} references"
            )
        if not items:
            raise InvalidArgumentError(f"method {method!r} has no outputs to evaluate")
        scores = []
        for out, ref in zip(items, references):
            mask = ref.pixels < building_threshold if mask_buildings else None
            scores.append(score_pair(out, ref, ssim_cfg, mask))
        row = MethodScore(
            method=method,
            psnr_db=float(np.mean([s.psnr_db for s in scores])),
            ssim=float(np.mean([s.ssim for s in scores])),
            nmse=float(np.mean([s.nmse for s in scores])),
            n_items=len(scores),
            per_item=scores,
        )
        logger.info(
            f"{method}: PSNR {row.psnr_db:.2f} dB, SSIM {row.ssim:.4f}, NMSE {row.nmse:.4f} "
            f"over {row.n_items} items"
        )
        rows.append(row)
    return EvaluationReport(rows=rows, config_hash=config_hash, mask_buildings=mask_buildings)


def write_report(report: EvaluationReport, out_dir: Path | str) -> tuple[Path, Path]:
    """
    Write `report.csv` (measured rows) and `reported.csv` (published context
    rows, flagged as not reproduced). Returns both paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    measured = out_dir / "report.csv"
    with measured.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for row in report.rows:
            writer.writerow(
                [row.method, f"{row.psnr_db:.4f}", f"{row.ssim:.6f}", f"{row.nmse:.6f}", row.n_items, report.config_hash]
            )

    context = out_dir / "reported.csv"
    with context.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(REPORTED_COLUMNS)
        for method, (p, s, n) in report.reported.items():
            writer.writerow([method, f"{p:.2f}", f"{s:.4f}", f"{n:.4f}", REPORTED_STATUS])
    logger.info(f"Wrote report to {measured}")
    return measured, context


def read_report(path: Path | str) -> List[dict]:
    with Path(path).open("r", newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))
