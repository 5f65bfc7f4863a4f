"""Reward-guided fine-tuning losses: depth consistency and set-level MMD.

Rewards act on predicted clean latents and only when the sampled timestep
falls below a threshold tau, where the clean-latent estimate is reliable.
Both rewards are differentiable, so the combined objective is their
weighted sum on top of the denoising loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .depth import masked_mse
from .diffusion import ConditionedDenoiser, ddpm_loss
from .schedule import NoiseSchedule, predict_clean_latent


@dataclass(frozen=True)
class RewardConfig:
    tau: int  # reward applies for sampled t < tau
    lambda_depth: float = 0.1
    lambda_mmd: float = 0.1
    bandwidth: float | None = None  # None selects the median heuristic

    def validate(self, timesteps: int) -> None:
        if not 0 <= self.tau <= timesteps:
            raise ValueError(f"tau={self.tau} outside 0..{timesteps}")
        if self.lambda_depth < 0 or self.lambda_mmd < 0:
            raise ValueError("reward weights must be non-negative")


def _pairwise_sq_dists(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a2 = (a * a).sum(dim=1, keepdim=True)
    b2 = (b * b).sum(dim=1, keepdim=True)
    d2 = a2 + b2.T - 2.0 * a @ b.T
    return d2.clamp_min(0.0)


def median_heuristic_bandwidth(x: torch.Tensor, y: torch.Tensor) -> float:
    """Median pairwise distance of the pooled sets; falls back to 1 if zero."""
    pooled = torch.cat([x, y], dim=0).detach()
    d2 = _pairwise_sq_dists(pooled, pooled)
    n = pooled.shape[0]
    off_diag = d2[~torch.eye(n, dtype=torch.bool)]
    median = float(off_diag.sqrt().median())
    return median if median > 0.0 else 1.0


def mmd_sq(z_i: torch.Tensor, z_gt: torch.Tensor, bandwidth: float | None = None) -> torch.Tensor:
    """Unbiased squared maximum mean discrepancy with an RBF kernel.

    Inputs are sets of flattened latent vectors, one row per sample; both
    sets need at least two members for the unbiased estimator.
    """
    if z_i.ndim != 2 or z_gt.ndim != 2:
        raise ValueError("mmd_sq expects 2-d (set, feature) inputs")
    n, m = z_i.shape[0], z_gt.shape[0]
    if n < 2 or m < 2:
        raise ValueError(f"unbiased MMD needs >= 2 samples per set, got {n} and {m}")
    if z_i.shape[1] != z_gt.shape[1]:
        raise ValueError(
            f"feature dims differ: {z_i.shape[1]} vs {z_gt.shape[1]}"
        )
    sigma = bandwidth if bandwidth is not None else median_heuristic_bandwidth(z_i, z_gt)
    gamma = 1.0 / (2.0 * sigma * sigma)
    k_xx = torch.exp(-gamma * _pairwise_sq_dists(z_i, z_i))
    k_yy = torch.exp(-gamma * _pairwise_sq_dists(z_gt, z_gt))
    k_xy = torch.exp(-gamma * _pairwise_sq_dists(z_i, z_gt))
    xx = (k_xx.sum() - k_xx.diagonal().sum()) / (n * (n - 1))
    yy = (k_yy.sum() - k_yy.diagonal().sum()) / (m * (m - 1))
    return xx + yy - 2.0 * k_xy.mean()


def depth_reward(
    z_img: torch.Tensor,
    decode_fn,
    depth_model,
    sparse_gt: torch.Tensor,
    mask: torch.Tensor,
) -> torch.Tensor:
    """Masked depth error of the decoded prediction, differentiable in z_img.

    decode_fn maps diffusion-space latents back to [0, 1] images (codec
    decode plus de-scaling); the depth model must be the frozen instance
    used everywhere else.
    """
    if z_img.ndim == 3:
        z_img = z_img[None]
        sparse_gt = sparse_gt[None]
        mask = mask[None]
    images = decode_fn(z_img).clamp(0.0, 1.0)
    pred = depth_model.predict_torch(images)[:, 0]
    return masked_mse(pred, sparse_gt.to(pred.dtype), mask)


def combined_objective(
    model: ConditionedDenoiser,
    latents: torch.Tensor,
    bundle,
    clean_latents: torch.Tensor,
    sparse_gt: torch.Tensor,
    mask: torch.Tensor,
    sched: NoiseSchedule,
    cfg: RewardConfig,
    generator: torch.Generator,
    decode_fn,
    depth_model,
):
    """Denoising loss plus gated reward terms.

    Returns (objective, diagnostics); diagnostics expose the three loss
    terms separately plus how many batch elements fell below tau.
    """
    cfg.validate(sched.timesteps)
    loss_lighting, aux = ddpm_loss(model, latents, bundle, sched, generator)
    t = aux["t"]
    gated = t < cfg.tau
    n_gated = int(gated.sum())
    diag = {
        "L_Lighting": float(loss_lighting.detach()),
        "L_MMD": 0.0,
        "L_Depth": 0.0,
        "n_gated": n_gated,
    }
    objective = loss_lighting
    if n_gated > 0 and (cfg.lambda_depth > 0 or cfg.lambda_mmd > 0):
        idx = torch.nonzero(gated, as_tuple=True)[0]
        z_pred = predict_clean_latent(
            aux["z_t"][idx], aux["eps_hat"][idx], t[idx].numpy(), sched
        )
        if cfg.lambda_depth > 0:
            l_depth = depth_reward(z_pred, decode_fn, depth_model, sparse_gt[idx], mask[idx])
            objective = objective + cfg.lambda_depth * l_depth
            diag["L_Depth"] = float(l_depth.detach())
        if cfg.lambda_mmd > 0 and n_gated >= 2:
            flat_pred = z_pred.reshape(n_gated, -1)
            flat_gt = clean_latents[idx].reshape(n_gated, -1)
            l_mmd = mmd_sq(flat_pred, flat_gt, cfg.bandwidth)
            objective = objective + cfg.lambda_mmd * l_mmd
            diag["L_MMD"] = float(l_mmd.detach())
    diag["L_obj"] = float(objective.detach())
    return objective, diag
