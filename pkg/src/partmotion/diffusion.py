"""Variance schedules, forward noising, x0-parameterised reverse sampling.

Steps are 1-indexed: ``t`` runs over ``1..T``, and ``alpha_bar(0) == 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

FULL_SCALE_STEPS = 1000
FULL_SCALE_BETAS = (1e-4, 0.02)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for ``(seed, stream)``; equal ids give equal draws."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),)))


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def num_steps(self) -> int:
        return len(self.betas)

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def check_step(self, t: int) -> None:
        if not 1 <= t <= self.num_steps:
            raise ValueError(f"step {t} outside [1, {self.num_steps}]")


def schedule_from_betas(betas) -> DiffusionSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1:
        raise ValueError("betas must be a non-empty vector")
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise ValueError("every beta must lie in (0, 1)")
    alphas = 1.0 - betas
    return DiffusionSchedule(betas, alphas, np.cumprod(alphas))


def make_schedule(num_steps: int, beta_start: float, beta_end: float, kind: str = "linear") -> DiffusionSchedule:
    if kind != "linear":
        raise ValueError(f"unsupported schedule kind {kind!r}")
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return schedule_from_betas(np.linspace(beta_start, beta_end, num_steps))


def scaled_linear_betas(num_steps: int) -> tuple[float, float]:
    """Beta range that keeps the full-scale noise budget when using fewer steps."""
    scale = FULL_SCALE_STEPS / num_steps
    lo, hi = FULL_SCALE_BETAS
    return lo * scale, min(hi * scale, 0.999)


def forward_sample(x0: np.ndarray, t: int, schedule: DiffusionSchedule, rng: np.random.Generator,
                   noise: np.ndarray | None = None) -> np.ndarray:
    schedule.check_step(t)
    if noise is None:
        noise = rng.standard_normal(np.shape(x0))
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def forward_sample_batch(x0: np.ndarray, t: np.ndarray, schedule: DiffusionSchedule,
                         rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Noise a batch (leading axis) with per-sample steps; returns (x_t, eps)."""
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > schedule.num_steps):
        raise ValueError("step out of range")
    ab = schedule.alpha_bars[t - 1].reshape((-1,) + (1,) * (x0.ndim - 1))
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps, eps


def posterior_mean(x_t: np.ndarray, x0_hat: np.ndarray, t: int, schedule: DiffusionSchedule,
                   form: str = "standard") -> np.ndarray:
    """Mean of the reverse step given a clean-sample estimate.

    ``form="printed"`` skips the 1/sqrt(1 - alpha_bar) factor that turns the
    residual into a noise estimate; it is kept only for comparison.
    """
    if t == 0:
        raise ValueError("posterior mean undefined at t=0")
    schedule.check_step(t)
    x_t = np.asarray(x_t)
    x0_hat = np.asarray(x0_hat)
    if x_t.shape != x0_hat.shape:
        raise ValueError(f"shape mismatch {x_t.shape} vs {x0_hat.shape}")
    a, b, ab = schedule.alpha(t), schedule.beta(t), schedule.alpha_bar(t)
    resid = x_t - np.sqrt(ab) * x0_hat
    if form == "standard":
        eps_hat = resid / np.sqrt(1.0 - ab)
        return (x_t - b / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    if form == "printed":
        return (x_t - b / np.sqrt(1.0 - ab) * resid) / np.sqrt(a)
    raise ValueError(f"unknown form {form!r}")


def reverse_step(x_t, x0_hat, t: int, schedule: DiffusionSchedule, rng: np.random.Generator,
                 stochastic: bool = True, form: str = "standard") -> np.ndarray:
    mu = posterior_mean(x_t, x0_hat, t, schedule, form=form)
    if stochastic and t > 1:
        return mu + np.sqrt(1.0 - schedule.alpha(t)) * rng.standard_normal(mu.shape)
    return mu


def cfg_combine(x0_uncond: np.ndarray, x0_cond: np.ndarray, scale: float) -> np.ndarray:
    if np.shape(x0_uncond) != np.shape(x0_cond):
        raise ValueError("shape mismatch")
    return x0_uncond + scale * (x0_cond - x0_uncond)


def compose_overwrite(x0_hat: np.ndarray, x_inter: np.ndarray, mask) -> np.ndarray:
    """Masked dims come from ``x_inter`` (bit-exact), the rest from ``x0_hat``."""
    bits = getattr(mask, "bits", mask)
    bits = np.asarray(bits)
    x0_hat = np.asarray(x0_hat)
    x_inter = np.asarray(x_inter)
    if x0_hat.shape != x_inter.shape or bits.shape[-1] != x0_hat.shape[-1]:
        raise ValueError(f"shape mismatch: {x0_hat.shape}, {x_inter.shape}, mask {bits.shape}")
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("mask must be binary")
    return np.where(bits.astype(bool), x_inter, x0_hat)


Predictor = Callable[[np.ndarray, int], np.ndarray]


def sample_loop(predict: Predictor, shape: tuple[int, ...], schedule: DiffusionSchedule,
                rng: np.random.Generator, stochastic: bool = True,
                x_inter: np.ndarray | None = None, mask=None,
                on_step: Callable[[int, np.ndarray], None] | None = None) -> np.ndarray:
    """Ancestral sampling from pure noise with an x0 predictor.

    When ``x_inter``/``mask`` are given, every prediction is overwritten on the
    masked dims before it feeds the posterior mean, and once more on the
    returned sample so those dims match ``x_inter`` exactly.
    """
    overwrite = x_inter is not None and mask is not None
    x = rng.standard_normal(shape)
    for t in range(schedule.num_steps, 0, -1):
        x0_hat = predict(x, t)
        if overwrite:
            x0_hat = compose_overwrite(x0_hat, x_inter, mask)
        if on_step is not None:
            on_step(t, x0_hat)
        x = reverse_step(x, x0_hat, t, schedule, rng, stochastic=stochastic)
    if overwrite:
        x = compose_overwrite(x, x_inter, mask)
    return x
