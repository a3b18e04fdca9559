"""
Conditional noise predictor eps_theta(F_lr, F_t, t) and its optimization
primitives.

The network is a small encoder-decoder with skip connections. The LR
condition is upsampled bicubically to the HR size and concatenated with
F_t as a second input channel. Each residual block uses group norm and
SiLU and adds a learned projection of the sinusoidal time embedding. The
last convolution is zero-initialized so eps_hat is 0 at initialization.
"""

import copy
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import ValidationError
from torch import nn

from app.config.run_config import DenoiserDescriptor, OptimizerConfig
from app.errors import (
    InvalidArgumentError,
    RasterValidationError,
    ShapeError,
    TrainingFault,
)
from app.services.schedule import Schedule, Timestep, q_sample

logger = logging.getLogger(__name__)

IN_CHANNELS = 2
OUT_CHANNELS = 1


def time_embed(t: Timestep, dim: int) -> torch.Tensor:
    """
    Sinusoidal embedding [sin(t·w_k), cos(t·w_k)] with w_k = 10000^(-k/(dim/2 - 1)).

    An int gives a (dim,) vector, a (B,) tensor a (B, dim) matrix; both float64.
    """
    if dim < 2 or dim % 2:
        raise InvalidArgumentError(f"time embedding width must be even and >= 2, got {dim}")
    half = dim // 2
    if half == 1:
        freqs = torch.ones(1, dtype=torch.float64)
    else:
        freqs = torch.pow(10000.0, -torch.arange(half, dtype=torch.float64) / (half - 1))
    if isinstance(t, torch.Tensor):
        phase = t.to(torch.float64).reshape(-1, 1) * freqs.to(t.device)
    else:
        phase = float(t) * freqs
    return torch.cat([torch.sin(phase), torch.cos(phase)], dim=-1)


class ResBlock(nn.Module):
    """GroupNorm -> SiLU -> conv, + time projection, GroupNorm -> SiLU -> conv, + skip."""

    def __init__(self, in_channels: int, out_channels: int, time_dim: int, groups: int, kernel_size: int):
        super().__init__()
        padding = kernel_size // 2
        self.norm1 = nn.GroupNorm(groups, in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, kernel_size, padding=padding)
        self.time_proj = nn.Linear(time_dim, out_channels)
        self.norm2 = nn.GroupNorm(groups, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, kernel_size, padding=padding)
        if in_channels != out_channels:
            self.skip = nn.Conv2d(in_channels, out_channels, 1)
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class ConditionalUNet(nn.Module):
    """Encoder-decoder noise predictor over a 2-channel (F_t, upsampled F_lr) input."""

    def __init__(self, descriptor: DenoiserDescriptor):
        super().__init__()
        self.descriptor = descriptor
        self.levels = descriptor.levels
        k = descriptor.kernel_size
        td = descriptor.time_dim
        g = descriptor.norm_groups
        widths = [descriptor.base_channels * 2 ** level for level in range(descriptor.levels)]

        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.in_conv = nn.Conv2d(IN_CHANNELS, widths[0], k, padding=k // 2)

        self.down = nn.ModuleList()
        prev = widths[0]
        for width in widths:
            self.down.append(ResBlock(prev, width, td, g, k))
            prev = width
        self.mid = ResBlock(widths[-1], widths[-1], td, g, k)

        self.up = nn.ModuleList()
        for level in reversed(range(descriptor.levels)):
            out = widths[level - 1] if level > 0 else widths[0]
            self.up.append(ResBlock(2 * widths[level], out, td, g, k))

        self.out_norm = nn.GroupNorm(g, widths[0])
        self.out_conv = nn.Conv2d(widths[0], OUT_CHANNELS, k, padding=k // 2)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        temb = self.time_mlp(time_embed(t, self.descriptor.time_dim).to(x.dtype))
        h = self.in_conv(x)
        skips = []
        for level, block in enumerate(self.down):
            h = block(h, temb)
            skips.append(h)
            if level < self.levels - 1:
                h = F.avg_pool2d(h, 2)
        h = self.mid(h, temb)
        for i, block in enumerate(self.up):
            level = self.levels - 1 - i
            h = block(torch.cat([h, skips.pop()], dim=1), temb)
            if level > 0:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
        return self.out_conv(F.silu(self.out_norm(h)))


def _as_descriptor(descriptor: Union[DenoiserDescriptor, Mapping[str, Any]]) -> DenoiserDescriptor:
    try:
        if isinstance(descriptor, DenoiserDescriptor):
            descriptor = DenoiserDescriptor.model_validate(descriptor.model_dump())
        else:
            descriptor = DenoiserDescriptor.model_validate(dict(descriptor))
    except ValidationError as exc:
        raise InvalidArgumentError(f"invalid denoiser descriptor: {exc}") from exc
    return descriptor


def param_count(descriptor: DenoiserDescriptor) -> int:
    """Number of learnable scalars; a pure function of the descriptor."""
    with torch.device("meta"):
        model = ConditionalUNet(_as_descriptor(descriptor))
    return sum(p.numel() for p in model.parameters())


def init_params(
    descriptor: Union[DenoiserDescriptor, Mapping[str, Any]],
    seed: int,
    dtype: torch.dtype = torch.float32,
) -> ConditionalUNet:
    """
    Build a network with deterministic fan-in scaled initialization.

    Conv/linear weights ~ N(0, 1/fan_in), biases 0, group-norm scale 1 and
    offset 0, final convolution all zero. The global torch RNG is untouched.
    """
    descriptor = _as_descriptor(descriptor)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ConditionalUNet(descriptor)
        for module in model.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                nn.init.kaiming_normal_(module.weight, nonlinearity="linear")
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.GroupNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        nn.init.zeros_(model.out_conv.weight)
        nn.init.zeros_(model.out_conv.bias)
    return model.to(dtype)


@dataclass
class Batch:
    """Paired HR (B,1,H,W) and LR (B,1,H/r,W/r) EnvCF tensors."""

    f0: torch.Tensor
    f_lr: torch.Tensor
    factor: int

    def __post_init__(self):
        if self.f0.dim() != 4 or self.f0.shape[1] != 1:
            raise ShapeError(f"f0 must be (B, 1, H, W), got {tuple(self.f0.shape)}")
        expected = (self.f0.shape[0], 1, self.f0.shape[2] // self.factor, self.f0.shape[3] // self.factor)
        if self.f0.shape[2] % self.factor or self.f0.shape[3] % self.factor or tuple(self.f_lr.shape) != expected:
            raise ShapeError(
                f"f_lr {tuple(self.f_lr.shape)} does not pair with f0 {tuple(self.f0.shape)} at factor {self.factor}"
            )

    @classmethod
    def from_arrays(
        cls,
        hr: Sequence[np.ndarray],
        lr: Sequence[np.ndarray],
        factor: int,
        dtype: torch.dtype = torch.float32,
    ) -> "Batch":
        f0 = torch.as_tensor(np.stack(hr)[:, None], dtype=dtype)
        f_lr = torch.as_tensor(np.stack(lr)[:, None], dtype=dtype)
        return cls(f0=f0, f_lr=f_lr, factor=factor)

    def __len__(self) -> int:
        return self.f0.shape[0]


def upsample_condition(f_lr: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Bicubic upsampling of the LR condition to the HR size, clamped to [0, 1]."""
    if tuple(f_lr.shape[-2:]) == tuple(size):
        return f_lr
    return F.interpolate(f_lr, size=size, mode="bicubic", align_corners=False).clamp(0.0, 1.0)


def forward(
    model: nn.Module,
    f_lr: torch.Tensor,
    f_t: torch.Tensor,
    t: Timestep,
    per_item: Optional[bool] = None,
) -> torch.Tensor:
    """
    eps_hat = eps_theta(F_lr, F_t, t), same shape as F_t.

    f_lr may be given at LR size or already upsampled to F_t's size.

    With `per_item` the network runs on one item at a time, so each output
    is bitwise identical to a batch-of-one call and batch order or splits
    cannot change it. It defaults to
    torch.are_deterministic_algorithms_enabled().
    """
    if f_t.dim() != 4 or f_t.shape[1] != 1:
        raise ShapeError(f"f_t must be (B, 1, H, W), got {tuple(f_t.shape)}")
    if f_lr.dim() != 4 or f_lr.shape[:2] != f_t.shape[:2]:
        raise ShapeError(f"f_lr {tuple(f_lr.shape)} does not match f_t {tuple(f_t.shape)}")
    height, width = f_t.shape[-2:]
    if height % f_lr.shape[2] or width % f_lr.shape[3] or height // f_lr.shape[2] != width // f_lr.shape[3]:
        raise ShapeError(f"f_lr {tuple(f_lr.shape)} is not an integer downscale of {tuple(f_t.shape)}")
    multiple = 2 ** getattr(model, "levels", 0)
    if height % multiple or width % multiple:
        raise ShapeError(f"spatial size {height}x{width} is not divisible by {multiple}")
    if not (torch.isfinite(f_t).all() and torch.isfinite(f_lr).all()):
        raise RasterValidationError("non-finite values in denoiser input")

    if isinstance(t, torch.Tensor):
        t = t.reshape(-1).to(device=f_t.device)
        if t.numel() != f_t.shape[0]:
            raise ShapeError(f"{t.numel()} timesteps for a batch of {f_t.shape[0]}")
    else:
        t = torch.full((f_t.shape[0],), int(t), dtype=torch.long, device=f_t.device)

    x = torch.cat([f_t, upsample_condition(f_lr, (height, width)).to(f_t.dtype)], dim=1)
    if per_item is None:
        per_item = torch.are_deterministic_algorithms_enabled()
    if per_item and x.shape[0] > 1:
        return torch.cat([model(x[i : i + 1], t[i : i + 1]) for i in range(x.shape[0])], dim=0)
    return model(x, t)


@dataclass
class LossResult:
    """Loss value plus the sampled timesteps, noise and activations it used."""
    loss: torch.Tensor
    t: torch.Tensor
    eps: torch.Tensor
    f_t: torch.Tensor
    eps_hat: torch.Tensor


def loss(
    model: nn.Module,
    batch: Batch,
    s: Schedule,
    generator: Optional[torch.Generator] = None,
    t: Optional[torch.Tensor] = None,
    eps: Optional[torch.Tensor] = None,
) -> LossResult:
    """
    Simplified denoising objective: mean over batch and pixels of
    (eps - eps_theta(F_lr, sqrt(abar_t)·F_0 + sqrt(1 - abar_t)·eps, t))^2.

    t ~ Uniform{1..T} and eps ~ N(0, I) are drawn per item unless given.
    """
    f0 = batch.f0
    if t is None:
        t = torch.randint(1, s.T + 1, (f0.shape[0],), generator=generator)
    if eps is None:
        eps = torch.randn(f0.shape, generator=generator, dtype=f0.dtype)
    f_t = q_sample(f0, t, eps, s)
    eps_hat = forward(model, batch.f_lr, f_t, t)
    value = torch.mean((eps - eps_hat) ** 2)
    return LossResult(loss=value, t=t, eps=eps, f_t=f_t, eps_hat=eps_hat)


@dataclass
class GradResult:
    loss: float
    grads: Dict[str, torch.Tensor]
    t: torch.Tensor
    eps: torch.Tensor


def grad(
    model: nn.Module,
    batch: Batch,
    s: Schedule,
    generator: Optional[torch.Generator] = None,
    t: Optional[torch.Tensor] = None,
    eps: Optional[torch.Tensor] = None,
    step: Optional[int] = None,
) -> GradResult:
    """
    Exact reverse-mode gradients of the loss for every named parameter.

    Raises:
        TrainingFault: loss or any gradient is non-finite
    """
    model.zero_grad(set_to_none=True)
    result = loss(model, batch, s, generator=generator, t=t, eps=eps)
    result.loss.backward()

    grads: Dict[str, torch.Tensor] = {}
    bad = []
    for name, param in model.named_parameters():
        g = param.grad.detach().clone() if param.grad is not None else torch.zeros_like(param)
        if not torch.isfinite(g).all():
            bad.append(name)
        grads[name] = g
    value = float(result.loss.detach())
    if bad or not math.isfinite(value):
        raise TrainingFault(
            f"non-finite loss or gradient at step {step}",
            diagnostics={
                "step": step,
                "loss": value,
                "non_finite_params": bad,
                "timesteps": result.t.tolist(),
            },
        )
    return GradResult(loss=value, grads=grads, t=result.t, eps=result.eps)


@dataclass
class TrainState:
    """Parameters, EMA copy, Adam moments (inside `optimizer`) and the step counter."""

    model: nn.Module
    ema_model: nn.Module
    optimizer: torch.optim.Adam
    step: int = 0
    lr: float = 2e-4
    ema_decay: float = 0.9999
    ema_start: int = 0
    grad_clip: Optional[float] = None

    @classmethod
    def create(
        cls,
        model: nn.Module,
        cfg: OptimizerConfig,
    ) -> "TrainState":
        ema_model = copy.deepcopy(model)
        for p in ema_model.parameters():
            p.requires_grad_(False)
        optimizer = torch.optim.Adam(
            model.parameters(),
            lr=cfg.lr,
            betas=(cfg.beta1, cfg.beta2),
            eps=cfg.eps,
        )
        return cls(
            model=model,
            ema_model=ema_model,
            optimizer=optimizer,
            lr=cfg.lr,
            ema_decay=cfg.ema_decay,
            ema_start=cfg.ema_start,
            grad_clip=cfg.grad_clip,
        )


def adam_step(state: TrainState, grads: Mapping[str, torch.Tensor]) -> TrainState:
    """Bias-corrected Adam update with the given gradients; increments the step."""
    params = dict(state.model.named_parameters())
    if set(params) != set(grads):
        raise ShapeError("gradient names do not match the model parameters")
    for name, param in params.items():
        g = grads[name]
        if g.shape != param.shape:
            raise ShapeError(f"gradient for {name} has shape {tuple(g.shape)}, expected {tuple(param.shape)}")
        param.grad = g.to(dtype=param.dtype, device=param.device).clone()
    if state.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(state.model.parameters(), max_norm=state.grad_clip)
    state.optimizer.step()
    state.step += 1
    return state


@torch.no_grad()
def ema_update(state: TrainState) -> TrainState:
    """
    ema <- decay·ema + (1 - decay)·params once step >= ema_start;
    before that the EMA mirrors the parameters.
    """
    ema_params = dict(state.ema_model.named_parameters())
    for name, param in state.model.named_parameters():
        ema = ema_params[name]
        if state.step < state.ema_start:
            ema.copy_(param)
        else:
            ema.mul_(state.ema_decay).add_(param, alpha=1.0 - state.ema_decay)
    return state
