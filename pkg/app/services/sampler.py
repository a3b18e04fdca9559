"""
Conditional reverse diffusion: the x0 estimate and the T-step generation chain.

The reverse step uses the posterior standard deviation
sqrt((1 - abar_{t-1}) / (1 - abar_t) · beta_t), which is exactly zero at
t = 1 because abar_0 = 1. Outputs are clamped to [0, 1] only once, after
the last step, unless `clip_denoised` asks for per-step clamping of x0.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from app.config.run_config import DenoiserDescriptor
from app.errors import InvalidArgumentError, SamplingFault
from app.models.rasters import EnvCF, GridSpec, RoleTag
from app.services.denoiser import forward, upsample_condition
from app.services.schedule import Schedule, Timestep
from app.services.seeding import derive_seed
from app.services.storage import load_model, write_envcf

logger = logging.getLogger(__name__)


def predict_x0(f_t: torch.Tensor, eps_hat: torch.Tensor, t: Timestep, s: Schedule) -> torch.Tensor:
    """x0_hat = (F_t - sqrt(1 - abar_t)·eps_hat) / sqrt(abar_t), unclamped."""
    return (f_t - s.coef("sqrt_one_minus_alpha_bar", t, f_t) * eps_hat) / s.coef("sqrt_alpha_bar", t, f_t)


def posterior_std(t: int, s: Schedule) -> float:
    return float(np.sqrt(s.posterior_variance_at(t)))


def _check_finite(x: torch.Tensor, t: int, what: str) -> None:
    if not torch.isfinite(x).all():
        raise SamplingFault(
            f"non-finite {what} at t={t}",
            diagnostics={
                "t": t,
                "non_finite": int((~torch.isfinite(x)).sum()),
                "numel": x.numel(),
            },
        )


def ddpm_step(
    model: nn.Module,
    f_t: torch.Tensor,
    t: int,
    f_lr_up: torch.Tensor,
    s: Schedule,
    generator: Optional[torch.Generator] = None,
    clip_denoised: bool = False,
    noise: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    One conditional refinement step F_t -> F_{t-1}.

    mean = (F_t - beta_t / sqrt(1 - abar_t) · eps_theta) / sqrt(alpha_t), and
    fresh N(0, I) noise scaled by the posterior std is added for t > 1 only.
    `noise` overrides the draw from `generator`.
    """
    t = int(t)
    if not 1 <= t <= s.T:
        raise InvalidArgumentError(f"timestep {t} outside [1, {s.T}]")
    eps_hat = forward(model, f_lr_up, f_t, t)
    _check_finite(eps_hat, t, "noise prediction")

    beta = s.beta_at(t)
    alpha = s.alpha_at(t)
    alpha_bar = s.alpha_bar_at(t)
    if clip_denoised:
        alpha_bar_prev = s.alpha_bar_at(t - 1)
        x0 = predict_x0(f_t, eps_hat, t, s).clamp(0.0, 1.0)
        mean = (
            beta * alpha_bar_prev ** 0.5 / (1.0 - alpha_bar) * x0
            + (1.0 - alpha_bar_prev) * alpha ** 0.5 / (1.0 - alpha_bar) * f_t
        )
    else:
        mean = (f_t - beta / (1.0 - alpha_bar) ** 0.5 * eps_hat) / alpha ** 0.5

    if t > 1:
        if noise is None:
            noise = torch.randn(f_t.shape, generator=generator, dtype=f_t.dtype)
        mean = mean + posterior_std(t, s) * noise
    _check_finite(mean, t, "chain state")
    return mean


def _model_dtype(model: nn.Module) -> torch.dtype:
    param = next(model.parameters(), None)
    return param.dtype if param is not None else torch.float64


@torch.no_grad()
def _run_chain(
    model: nn.Module,
    cond: torch.Tensor,
    s: Schedule,
    seed: int,
    clip_denoised: bool,
    snapshot_every: int = 0,
    snapshot_dir: Optional[Path] = None,
    grid: Optional[GridSpec] = None,
) -> torch.Tensor:
    generator = torch.Generator().manual_seed(int(seed))
    x = torch.randn(cond.shape, generator=generator, dtype=cond.dtype)
    for t in range(s.T, 0, -1):
        x = ddpm_step(model, x, t, cond, s, generator=generator, clip_denoised=clip_denoised)
        if snapshot_dir is not None and snapshot_every and ((t - 1) % snapshot_every == 0 or t == 1):
            frame = x[0, 0].clamp(0.0, 1.0).double().numpy()
            write_envcf(snapshot_dir / f"step_{t - 1:05d}.png", EnvCF(grid=grid, pixels=frame))
    return x


def sample(
    model: nn.Module,
    f_lr: EnvCF,
    s: Schedule,
    seed: int,
    factor: int,
    clip_denoised: bool = False,
    num_samples: int = 1,
    snapshot_every: int = 0,
    snapshot_dir: Optional[Path | str] = None,
) -> EnvCF:
    """
    Generate an HR EnvCF estimate from an LR one (T-step reverse chain).

    F_T ~ N(0, I) is drawn from `seed`; with num_samples > 1 the outputs of
    chains seeded derive_seed(seed, k) are averaged. The result is clamped
    to [0, 1].
    """
    if factor < 1:
        raise InvalidArgumentError(f"factor must be >= 1, got {factor}")
    if num_samples < 1:
        raise InvalidArgumentError(f"num_samples must be >= 1, got {num_samples}")
    model.eval()
    dtype = _model_dtype(model)
    hr_res = f_lr.resolution * factor
    hr_grid = GridSpec(area_side_m=f_lr.grid.area_side_m, resolution=hr_res)
    lr = torch.as_tensor(f_lr.pixels, dtype=dtype)[None, None]
    cond = upsample_condition(lr, (hr_res, hr_res))
    snapshot_dir = Path(snapshot_dir) if snapshot_dir is not None else None

    if num_samples == 1:
        out = _run_chain(model, cond, s, seed, clip_denoised, snapshot_every, snapshot_dir, hr_grid)
    else:
        chains = []
        for k in range(num_samples):
            chain_dir = snapshot_dir / f"chain_{k:02d}" if snapshot_dir is not None else None
            chains.append(
                _run_chain(model, cond, s, derive_seed(seed, k), clip_denoised, snapshot_every, chain_dir, hr_grid)
            )
        out = torch.stack(chains).mean(dim=0)

    pixels = out[0, 0].clamp(0.0, 1.0).double().numpy()
    bs_cell = None
    if f_lr.bs_cell is not None:
        bs_cell = (f_lr.bs_cell[0] * factor, f_lr.bs_cell[1] * factor)
    return EnvCF(
        grid=hr_grid,
        pixels=pixels,
        role=RoleTag.HR,
        bs_cell=bs_cell,
        min_db=f_lr.min_db,
        max_db=f_lr.max_db,
    )


def sample_batch(
    checkpoint: Union[nn.Module, Path, str],
    f_lrs: Sequence[EnvCF],
    s: Schedule,
    seed: int,
    factor: int,
    workers: int = 1,
    use_ema: bool = True,
    descriptor: Optional[DenoiserDescriptor] = None,
    clip_denoised: bool = False,
    num_samples: int = 1,
    snapshot_every: int = 0,
    snapshot_dir: Optional[Path | str] = None,
    item_ids: Optional[Sequence[int]] = None,
) -> list[EnvCF]:
    """
    Sample every LR input with the per-item seed derive_seed(seed, i).

    `checkpoint` is a checkpoint path (EMA weights by default) or a loaded
    network. Outputs keep the input order for any worker count. With
    `snapshot_every` > 0 each chain writes its frames to
    `snapshot_dir/<item id>/`; ids default to the input positions.
    """
    if not f_lrs:
        return []
    if isinstance(checkpoint, nn.Module):
        model = checkpoint
    else:
        model = load_model(checkpoint, descriptor=descriptor, schedule=s, use_ema=use_ema)
    if item_ids is None:
        item_ids = range(len(f_lrs))
    elif len(item_ids) != len(f_lrs):
        raise InvalidArgumentError(f"{len(item_ids)} item ids for {len(f_lrs)} inputs")
    snapshot_root = Path(snapshot_dir) if snapshot_dir is not None and snapshot_every else None

    def _one(index: int) -> EnvCF:
        out = sample(
            model,
            f_lrs[index],
            s,
            derive_seed(seed, index),
            factor,
            clip_denoised=clip_denoised,
            num_samples=num_samples,
            snapshot_every=snapshot_every,
            snapshot_dir=snapshot_root / f"{item_ids[index]:05d}" if snapshot_root is not None else None,
        )
        logger.debug(f"Sampled item {index + 1}/{len(f_lrs)}")
        return out

    logger.info(f"Sampling {len(f_lrs)} inputs over T={s.T} steps with {workers} worker(s)")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(_one, range(len(f_lrs))))
    return [_one(i) for i in range(len(f_lrs))]
