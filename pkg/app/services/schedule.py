"""
Linear variance schedule and the closed-form forward (noising) process.

Timesteps are 1-based, t in {1..T}, with the convention alpha_bar(0) = 1.
All schedule arithmetic is float64; coefficients are cast to the tensor's
dtype only at the point of use.
"""

import logging
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import torch

from app.config.run_config import ScheduleConfig
from app.errors import InvalidArgumentError, ShapeError

logger = logging.getLogger(__name__)

Timestep = Union[int, torch.Tensor]


@dataclass(frozen=True, eq=False)
class Schedule:
    """
    Precomputed beta_t, alpha_t = 1 - beta_t and alpha_bar_t = prod alpha_i.

    The public arrays have length T and hold t = 1..T at positions 0..T-1.
    """

    T: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("beta", "alpha", "alpha_bar"):
            array = np.array(getattr(self, name), dtype=np.float64, copy=True)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        # index 0 is t = 0 for the padded tables
        alpha_bar_full = np.concatenate(([1.0], self.alpha_bar))
        beta_full = np.concatenate(([0.0], self.beta))
        posterior_variance = np.zeros(self.T + 1)
        posterior_variance[1:] = (
            (1.0 - alpha_bar_full[:-1]) / (1.0 - alpha_bar_full[1:]) * self.beta
        )
        tables = {
            "alpha_bar": alpha_bar_full,
            "beta": beta_full,
            "alpha": 1.0 - beta_full,
            "sqrt_alpha_bar": np.sqrt(alpha_bar_full),
            "sqrt_one_minus_alpha_bar": np.sqrt(1.0 - alpha_bar_full),
            "posterior_variance": posterior_variance,
        }
        object.__setattr__(self, "_tables", {k: torch.from_numpy(v) for k, v in tables.items()})

    @classmethod
    def from_config(cls, cfg: ScheduleConfig) -> "Schedule":
        return linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)

    def params(self) -> dict:
        """Parameters embedded in checkpoints."""
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end}

    def _check_t(self, t: int, allow_zero: bool = False) -> int:
        low = 0 if allow_zero else 1
        if int(t) != t or not low <= t <= self.T:
            raise InvalidArgumentError(f"timestep {t} outside [{low}, {self.T}]")
        return int(t)

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check_t(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check_t(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar_t with alpha_bar_0 = 1."""
        t = self._check_t(t, allow_zero=True)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def posterior_variance_at(self, t: int) -> float:
        """(1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t; exactly 0 at t = 1."""
        return float(self._tables["posterior_variance"][self._check_t(t)])

    def coef(self, name: str, t: Timestep, like: torch.Tensor) -> Union[float, torch.Tensor]:
        """
        Look up table `name` at t.

        A python int gives a float; a (B,) tensor of timesteps gives a
        tensor broadcastable against `like` in its dtype.
        """
        table = self._tables[name]
        if isinstance(t, torch.Tensor):
            t_long = t.to(torch.long).reshape(-1)
            if t_long.numel() and (t_long.min() < 1 or t_long.max() > self.T):
                raise InvalidArgumentError(f"timesteps must lie in [1, {self.T}]")
            if t_long.numel() != like.shape[0]:
                raise ShapeError(f"{t_long.numel()} timesteps for a batch of {like.shape[0]}")
            out = table.gather(0, t_long.cpu())
            return out.reshape(-1, *([1] * (like.dim() - 1))).to(device=like.device, dtype=like.dtype)
        return float(table[self._check_t(t)])


def linear_schedule(T: int, beta_start: float, beta_end: float) -> Schedule:
    """
    beta_t = beta_start + (t - 1)/(T - 1) * (beta_end - beta_start) for t = 1..T.
    """
    if int(T) != T or T < 2:
        raise InvalidArgumentError(f"T must be an integer >= 2, got {T}")
    if not 0.0 < beta_start < beta_end < 1.0:
        raise InvalidArgumentError(
            f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, int(T), dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return Schedule(
        T=int(T),
        beta_start=float(beta_start),
        beta_end=float(beta_end),
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
    )


def _check_pair(x: torch.Tensor, eps: torch.Tensor) -> None:
    if x.shape != eps.shape:
        raise ShapeError(f"noise shape {tuple(eps.shape)} does not match {tuple(x.shape)}")


def q_sample(f0: torch.Tensor, t: Timestep, eps: torch.Tensor, s: Schedule) -> torch.Tensor:
    """F_t = sqrt(alpha_bar_t)·F_0 + sqrt(1 - alpha_bar_t)·eps; never clamped."""
    _check_pair(f0, eps)
    return s.coef("sqrt_alpha_bar", t, f0) * f0 + s.coef("sqrt_one_minus_alpha_bar", t, f0) * eps


def chain_step(f_prev: torch.Tensor, t: Timestep, eps: torch.Tensor, s: Schedule) -> torch.Tensor:
    """One forward Markov step: F_t = sqrt(1 - beta_t)·F_{t-1} + sqrt(beta_t)·eps."""
    _check_pair(f_prev, eps)
    beta = s.coef("beta", t, f_prev)
    if isinstance(beta, torch.Tensor):
        return torch.sqrt(1.0 - beta) * f_prev + torch.sqrt(beta) * eps
    return (1.0 - beta) ** 0.5 * f_prev + beta ** 0.5 * eps
