"""
Training loop for the conditional denoiser.

Each step draws a batch of training pairs (with replacement), samples one
timestep and one noise field per item, takes an Adam step on the noise
matching loss and updates the EMA weights. "Until convergence" is a fixed
step budget, optionally cut short by a plateau detector on the smoothed
loss curve.
"""

import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
from tqdm import tqdm

from app.config.run_config import RunConfig
from app.errors import DataError, TrainingFault
from app.services.denoiser import Batch, TrainState, adam_step, ema_update, grad, init_params
from app.services.schedule import Schedule
from app.services.storage import LossLog, save_checkpoint
from app.services.synth import SyntheticDataset

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.pt"
LAST_GOOD_NAME = "checkpoint_last_good.pt"
LOSS_LOG_NAME = "loss.csv"


@dataclass
class TrainResult:
    """Final state plus the raw and smoothed loss curves."""
    state: TrainState
    losses: List[float] = field(default_factory=list)
    smoothed: List[float] = field(default_factory=list)
    stopped_early: bool = False
    checkpoint_path: Optional[Path] = None


class PlateauDetector:
    """Signals a stop once the smoothed loss has not improved by min_delta for `patience` steps."""

    def __init__(self, patience: Optional[int], min_delta: float):
        self.patience = patience
        self.min_delta = min_delta
        self.best = float("inf")
        self.best_step = 0

    def update(self, step: int, smoothed: float) -> bool:
        if self.patience is None:
            return False
        if smoothed < self.best - self.min_delta:
            self.best = smoothed
            self.best_step = step
            return False
        return step - self.best_step >= self.patience


def _stack(dataset: SyntheticDataset, dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    train = dataset.train
    hr = np.stack([pair.hr.pixels for pair in train])[:, None]
    lr = np.stack([pair.lr.pixels for pair in train])[:, None]
    return torch.as_tensor(hr, dtype=dtype), torch.as_tensor(lr, dtype=dtype)


def train(
    dataset: SyntheticDataset,
    config: RunConfig,
    run_dir: Optional[Path | str] = None,
    state: Optional[TrainState] = None,
    quiet: bool = False,
) -> TrainResult:
    """
    Train eps_theta on the dataset's training split.

    With `run_dir`, periodic and final checkpoints plus a loss log are
    written there. On a non-finite loss or gradient the last good state is
    checkpointed and the TrainingFault is re-raised.
    """
    if not dataset.train_indices:
        raise DataError("the training split is empty")
    opt = config.optimizer
    schedule = Schedule.from_config(config.schedule)
    config_hash = config.config_hash()
    run_dir = Path(run_dir) if run_dir is not None else None

    if state is None:
        model = init_params(config.denoiser, seed=config.seeds.init)
        state = TrainState.create(model, opt)
    state.model.train()
    dtype = next(state.model.parameters()).dtype
    f0_all, lr_all = _stack(dataset, dtype)
    n_train = f0_all.shape[0]

    generator = torch.Generator().manual_seed(config.seeds.train)
    # skip the draws of already-taken steps when resuming
    for _ in range(state.step):
        torch.randint(n_train, (opt.batch_size,), generator=generator)
        torch.randint(1, schedule.T + 1, (opt.batch_size,), generator=generator)
        torch.randn(opt.batch_size, *f0_all.shape[1:], generator=generator, dtype=dtype)

    loss_log = LossLog(run_dir / LOSS_LOG_NAME) if run_dir is not None else None
    plateau = PlateauDetector(opt.plateau_patience, opt.plateau_min_delta)
    result = TrainResult(state=state)
    pending_rows: list[tuple[int, float, float]] = []
    started = time.perf_counter()

    logger.info(
        f"Training from step {state.step} to {opt.steps} on {n_train} pairs "
        f"(batch {opt.batch_size}, lr {opt.lr}, T {schedule.T})"
    )
    progress = tqdm(
        range(state.step, opt.steps),
        desc="train",
        disable=quiet or not sys.stderr.isatty(),
    )
    for _ in progress:
        idx = torch.randint(n_train, (opt.batch_size,), generator=generator)
        batch = Batch(f0=f0_all[idx], f_lr=lr_all[idx], factor=dataset.factor)
        try:
            step_grad = grad(state.model, batch, schedule, generator=generator, step=state.step)
        except TrainingFault as fault:
            if run_dir is not None:
                path = save_checkpoint(run_dir / LAST_GOOD_NAME, state, schedule, config_hash)
                fault.diagnostics["last_good_checkpoint"] = str(path)
                if loss_log is not None:
                    loss_log.append(pending_rows)
            logger.error(f"Training fault at step {state.step}: {fault}")
            raise

        adam_step(state, step_grad.grads)
        ema_update(state)

        value = step_grad.loss
        result.losses.append(value)
        previous = result.smoothed[-1] if result.smoothed else value
        smoothed = opt.loss_smoothing * previous + (1.0 - opt.loss_smoothing) * value
        result.smoothed.append(smoothed)
        pending_rows.append((state.step, value, time.perf_counter() - started))
        progress.set_postfix(loss=f"{smoothed:.4f}")

        if run_dir is not None and state.step % opt.checkpoint_every == 0:
            loss_log.append(pending_rows)
            pending_rows = []
            save_checkpoint(run_dir / CHECKPOINT_NAME, state, schedule, config_hash)

        if plateau.update(state.step, smoothed):
            logger.info(
                f"Smoothed loss plateaued at {smoothed:.5f} (no improvement since step {plateau.best_step}); stopping"
            )
            result.stopped_early = True
            break
    progress.close()

    if run_dir is not None:
        if pending_rows:
            loss_log.append(pending_rows)
        result.checkpoint_path = save_checkpoint(run_dir / CHECKPOINT_NAME, state, schedule, config_hash)
    if result.smoothed:
        logger.info(
            f"Training finished at step {state.step}: smoothed loss "
            f"{result.smoothed[0]:.4f} -> {result.smoothed[-1]:.4f}"
        )
    return result
