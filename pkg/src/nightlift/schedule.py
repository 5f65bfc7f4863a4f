"""Noise schedule tables and the closed-form diffusion identities.

Steps are 1-based: t ranges over 1..T and alpha_bar(t) is the product of
alpha over steps 1..t.  Tables are kept in float64 so the recurrence and
inversion identities hold to near machine precision.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # (T,) float64
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    def beta(self, t):
        return self._gather(self.betas, t)

    def alpha(self, t):
        return self._gather(self.alphas, t)

    def alpha_bar(self, t):
        return self._gather(self.alpha_bars, t)

    def _gather(self, table: np.ndarray, t):
        idx = np.asarray(t, dtype=np.int64) - 1
        if np.any(idx < 0) or np.any(idx >= len(table)):
            raise ValueError(f"timestep {t} outside 1..{len(table)}")
        return table[idx]


def build_schedule(T: int = 200, beta_start: float = 1e-4, beta_end: float = 0.05) -> NoiseSchedule:
    """Linear beta schedule with precomputed alpha / alpha-bar tables.

    The default end value is scaled so that alpha_bar at T=200 drops below
    0.01 and the terminal latent is close to a standard Gaussian.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    if alpha_bars[-1] >= 0.01:
        warnings.warn(
            f"alpha_bar at T is {alpha_bars[-1]:.4f} (>= 0.01); the terminal latent "
            "will not be close to a standard Gaussian"
        )
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def _per_sample(values: np.ndarray, like: torch.Tensor) -> torch.Tensor:
    """Broadcast per-sample schedule scalars over trailing tensor dims."""
    coef = torch.as_tensor(values, dtype=like.dtype)
    if coef.ndim == 0:
        return coef
    return coef.reshape(-1, *([1] * (like.ndim - 1)))


def forward_diffuse(z: torch.Tensor, t, noise: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """z_t = sqrt(alpha_bar_t) z + sqrt(1 - alpha_bar_t) noise.

    t may be a scalar or one value per leading batch entry.
    """
    if noise.shape != z.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != latent shape {tuple(z.shape)}")
    ab = sched.alpha_bar(t)
    sqrt_ab = _per_sample(np.sqrt(ab), z)
    sqrt_one_minus = _per_sample(np.sqrt(1.0 - ab), z)
    return sqrt_ab * z + sqrt_one_minus * noise


def predict_clean_latent(z_t: torch.Tensor, eps_hat: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    """Invert forward_diffuse given a noise estimate:
    z = (z_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t)."""
    ab = sched.alpha_bar(t)
    sqrt_ab = _per_sample(np.sqrt(ab), z_t)
    sqrt_one_minus = _per_sample(np.sqrt(1.0 - ab), z_t)
    return (z_t - sqrt_one_minus * eps_hat) / sqrt_ab


def posterior_coefficients(t: int, sched: NoiseSchedule) -> tuple[float, float, float]:
    """Ancestral-step coefficients (mean_z, mean_eps, sigma) at step t:
    z_{t-1} = mean_z * z_t + mean_eps * eps_hat + sigma * xi."""
    beta = float(sched.beta(t))
    alpha = float(sched.alpha(t))
    ab_t = float(sched.alpha_bar(t))
    mean_z = 1.0 / np.sqrt(alpha)
    mean_eps = -beta / (np.sqrt(alpha) * np.sqrt(1.0 - ab_t))
    if t > 1:
        ab_prev = float(sched.alpha_bar(t - 1))
        sigma = float(np.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta))
    else:
        sigma = 0.0
    return mean_z, mean_eps, sigma
