"""Tests for the variance schedule and the forward process."""

import numpy as np
import pytest
import torch

from app.config import ScheduleConfig
from app.errors import InvalidArgumentError, ShapeError
from app.services.schedule import Schedule, chain_step, linear_schedule, q_sample


@pytest.fixture
def schedule():
    return linear_schedule(1000, 1e-6, 1e-2)


class TestLinearSchedule:
    """Tests for linear_schedule."""

    def test_endpoints(self, schedule):
        """beta_1 and beta_T are the configured endpoints."""
        assert schedule.beta_at(1) == pytest.approx(1e-6)
        assert schedule.beta_at(1000) == pytest.approx(1e-2)

    def test_monotone(self, schedule):
        """beta increases and alpha_bar decreases strictly."""
        assert np.all(np.diff(schedule.beta) > 0)
        assert np.all(np.diff(schedule.alpha_bar) < 0)
        assert 0.0 < schedule.alpha_bar[-1] < 1.0

    def test_recurrence(self, schedule):
        """alpha_bar_t = alpha_bar_{t-1}·(1 - beta_t)."""
        for t in (1, 2, 17, 500, 1000):
            expected = schedule.alpha_bar_at(t - 1) * (1.0 - schedule.beta_at(t))
            assert schedule.alpha_bar_at(t) == pytest.approx(expected, rel=1e-12)

    def test_alpha_bar_zero(self, schedule):
        """alpha_bar_0 is 1 by convention."""
        assert schedule.alpha_bar_at(0) == 1.0

    def test_posterior_variance_at_one(self, schedule):
        """The last reverse step adds no noise."""
        assert schedule.posterior_variance_at(1) == 0.0
        assert schedule.posterior_variance_at(2) > 0.0
        assert schedule.posterior_variance_at(500) <= schedule.beta_at(500)

    def test_from_config(self):
        """Schedules are built from ScheduleConfig."""
        s = Schedule.from_config(ScheduleConfig(T=20, beta_start=1e-4, beta_end=0.3))
        assert s.T == 20
        assert s.params() == {"T": 20, "beta_start": 1e-4, "beta_end": 0.3}

    @pytest.mark.parametrize("args", [(1, 1e-4, 1e-2), (10, 0.0, 1e-2), (10, 0.2, 0.1), (10, 1e-4, 1.0)])
    def test_invalid(self, args):
        """T < 2 and betas outside 0 < start < end < 1 are rejected."""
        with pytest.raises(InvalidArgumentError):
            linear_schedule(*args)

    @pytest.mark.parametrize("t", [0, 1001, -3, 2.5])
    def test_invalid_timestep(self, schedule, t):
        """Timesteps outside 1..T raise InvalidArgumentError."""
        with pytest.raises(InvalidArgumentError):
            schedule.beta_at(t)


class TestCoef:
    """Tests for tensor coefficient lookup."""

    def test_broadcast_shape(self, schedule):
        """A (B,) timestep tensor gives a (B, 1, 1, 1) coefficient in the tensor dtype."""
        x = torch.zeros(3, 2, 4, 4, dtype=torch.float32)
        coef = schedule.coef("sqrt_alpha_bar", torch.tensor([1, 10, 1000]), x)
        assert coef.shape == (3, 1, 1, 1)
        assert coef.dtype == torch.float32
        assert coef[2, 0, 0, 0].item() == pytest.approx(np.sqrt(schedule.alpha_bar_at(1000)), rel=1e-6)

    def test_scalar_lookup(self, schedule):
        """A python int gives a float."""
        x = torch.zeros(1, 1, 2, 2)
        assert schedule.coef("beta", 3, x) == pytest.approx(schedule.beta_at(3))

    def test_out_of_range_tensor(self, schedule):
        x = torch.zeros(2, 1, 2, 2)
        with pytest.raises(InvalidArgumentError):
            schedule.coef("beta", torch.tensor([0, 5]), x)

    def test_batch_mismatch(self, schedule):
        x = torch.zeros(2, 1, 2, 2)
        with pytest.raises(ShapeError):
            schedule.coef("beta", torch.tensor([1, 2, 3]), x)


class TestForwardProcess:
    """Tests for q_sample and chain_step."""

    def test_closed_form_value(self, schedule):
        """q_sample combines F_0 and eps with sqrt(alpha_bar) weights."""
        f0 = torch.full((1, 1, 2, 2), 0.5, dtype=torch.float64)
        eps = torch.ones_like(f0)
        out = q_sample(f0, 100, eps, schedule)
        ab = schedule.alpha_bar_at(100)
        np.testing.assert_allclose(out.numpy(), 0.5 * np.sqrt(ab) + np.sqrt(1 - ab))

    def test_not_clamped(self):
        """Noisy samples may leave [0, 1]."""
        s = linear_schedule(10, 0.1, 0.5)
        f0 = torch.ones(1, 1, 2, 2, dtype=torch.float64)
        out = q_sample(f0, 10, torch.full_like(f0, 3.0), s)
        assert out.max().item() > 1.0

    def test_shape_mismatch(self, schedule):
        with pytest.raises(ShapeError):
            q_sample(torch.zeros(1, 1, 2, 2), 1, torch.zeros(1, 1, 3, 3), schedule)

    @pytest.mark.parametrize("t", [1, 500, 1000])
    def test_marginal_moments(self, schedule, t):
        """Monte-Carlo variance of F_t matches 1 - alpha_bar_t within 3 standard errors."""
        n = 10_000
        generator = torch.Generator().manual_seed(t)
        f0 = torch.full((n, 1, 1, 1), 0.7, dtype=torch.float64)
        eps = torch.randn(f0.shape, generator=generator, dtype=torch.float64)
        samples = q_sample(f0, t, eps, schedule).reshape(-1).numpy()

        ab = schedule.alpha_bar_at(t)
        variance = 1.0 - ab
        mean_se = np.sqrt(variance / n)
        var_se = variance * np.sqrt(2.0 / (n - 1))
        assert abs(samples.mean() - 0.7 * np.sqrt(ab)) < 4 * mean_se
        assert abs(samples.var(ddof=1) - variance) < 3 * var_se

    def test_chain_matches_closed_form_in_distribution(self):
        """Iterating chain_step reproduces the closed-form variance of F_t."""
        s = linear_schedule(5, 0.05, 0.3)
        n = 20_000
        generator = torch.Generator().manual_seed(0)
        x = torch.zeros(n, 1, 1, 1, dtype=torch.float64)
        for t in range(1, 6):
            x = chain_step(x, t, torch.randn(x.shape, generator=generator, dtype=torch.float64), s)
        variance = 1.0 - s.alpha_bar_at(5)
        assert abs(x.var().item() - variance) < 3 * variance * np.sqrt(2.0 / (n - 1))

    def test_chain_step_tensor_timesteps(self):
        """chain_step accepts per-sample timesteps."""
        s = linear_schedule(5, 0.05, 0.3)
        x = torch.ones(2, 1, 2, 2, dtype=torch.float64)
        out = chain_step(x, torch.tensor([1, 5]), torch.zeros_like(x), s)
        assert out[0, 0, 0, 0].item() == pytest.approx(np.sqrt(1 - 0.05))
        assert out[1, 0, 0, 0].item() == pytest.approx(np.sqrt(1 - 0.3))
