"""Conditional denoising diffusion: objective and ancestral sampler.

The denoising pathway is assembled from a frozen backbone UNet, an optional
condition-fusion stage and an optional control branch.  Ablation switches
(zeroed depth or text condition, fusion bypassed) live here so that training
and sampling share one routing definition.
"""

from __future__ import annotations

import numpy as np
import torch

from .conditioning import ConditioningBundle, ConditionFusion, ControlBranch
from .nnops import torch_generator
from .schedule import NoiseSchedule, forward_diffuse, predict_clean_latent
from .textcond import TextEmbedder
from .unet import UNetDenoiser


class ConditionedDenoiser:
    """Noise predictor with conditions injected through the control branch."""

    def __init__(
        self,
        backbone: UNetDenoiser,
        text_embedder: TextEmbedder,
        fusion: ConditionFusion | None = None,
        branch: ControlBranch | None = None,
        use_fusion: bool = True,
        zero_depth: bool = False,
        zero_text: bool = False,
    ):
        self.backbone = backbone
        self.text_embedder = text_embedder
        self.fusion = fusion
        self.branch = branch
        self.use_fusion = use_fusion
        self.zero_depth = zero_depth
        self.zero_text = zero_text

    def embed_text(self, texts) -> torch.Tensor:
        return self.text_embedder(texts)

    def conditions(self, bundle: ConditioningBundle) -> torch.Tensor:
        """The 2C-channel condition stack handed to the control branch."""
        f_deg = bundle.deg_latent
        f_dep = bundle.depth_latent
        if self.zero_depth:
            f_dep = torch.zeros_like(f_dep)
        if self.use_fusion and self.fusion is not None:
            out_deg, out_dep = self.fusion(f_deg, f_dep)
        else:
            out_deg, out_dep = f_deg, f_dep
        return torch.cat([out_deg, out_dep], dim=1)

    def text_vector(self, bundle: ConditioningBundle) -> torch.Tensor:
        if self.zero_text:
            return torch.zeros_like(bundle.text_embedding)
        return bundle.text_embedding

    def eps(self, z_t: torch.Tensor, t: torch.Tensor, bundle: ConditioningBundle | None) -> torch.Tensor:
        if self.branch is not None and bundle is None:
            raise ValueError("a conditioned denoiser requires a ConditioningBundle")
        if bundle is None:
            c_t = torch.zeros(z_t.shape[0], self.backbone.text_dim, dtype=z_t.dtype)
            return self.backbone(z_t, t, c_t)
        c_t = self.text_vector(bundle)
        residuals = None
        if self.branch is not None:
            residuals = self.branch(self.conditions(bundle), z_t, t, c_t)
        return self.backbone(z_t, t, c_t, residuals)

    def trainable_parameters(self):
        params = []
        if self.fusion is not None and self.use_fusion:
            params += [p for p in self.fusion.parameters() if p.requires_grad]
        if self.branch is not None:
            params += [p for p in self.branch.parameters() if p.requires_grad]
        return params


def ddpm_loss(
    model: ConditionedDenoiser,
    latents: torch.Tensor,
    bundle: ConditioningBundle | None,
    sched: NoiseSchedule,
    generator: torch.Generator,
):
    """Denoising objective: mean squared error between drawn and predicted noise.

    Timesteps are sampled uniformly per batch element.  Returns the scalar
    loss plus the intermediates needed by the reward stage.
    """
    if latents.ndim != 4 or latents.shape[0] < 1:
        raise ValueError(f"expected a non-empty NCHW latent batch, got {tuple(latents.shape)}")
    b = latents.shape[0]
    t = torch.randint(1, sched.timesteps + 1, (b,), generator=generator)
    noise = torch.randn(latents.shape, generator=generator, dtype=latents.dtype)
    z_t = forward_diffuse(latents, t.numpy(), noise, sched)
    eps_hat = model.eps(z_t, t, bundle)
    loss = ((noise - eps_hat) ** 2).mean()
    aux = {"t": t, "noise": noise, "z_t": z_t, "eps_hat": eps_hat}
    return loss, aux


def sample(
    model: ConditionedDenoiser,
    bundle: ConditioningBundle | None,
    sched: NoiseSchedule,
    shape: tuple[int, ...],
    seed: int,
    clip_denoised: bool = True,
    clip_range: tuple[float, float] = (-1.0, 1.0),
    trace: list | None = None,
) -> torch.Tensor:
    """Ancestral sampling from pure noise, deterministic given the seed."""
    if model.branch is not None and bundle is None:
        raise ValueError("sampling a conditioned model requires a ConditioningBundle")
    gen = torch_generator(seed)
    z = torch.randn(shape, generator=gen)
    with torch.no_grad():
        for t in range(sched.timesteps, 0, -1):
            t_batch = torch.full((shape[0],), t, dtype=torch.long)
            eps_hat = model.eps(z, t_batch, bundle)
            x0 = predict_clean_latent(z, eps_hat, t, sched)
            if clip_denoised:
                x0 = x0.clamp(*clip_range)
            ab_t = float(sched.alpha_bar(t))
            beta = float(sched.beta(t))
            alpha = float(sched.alpha(t))
            ab_prev = float(sched.alpha_bar(t - 1)) if t > 1 else 1.0
            mean = (
                np.sqrt(ab_prev) * beta / (1.0 - ab_t) * x0
                + np.sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t) * z
            )
            if t > 1:
                sigma = np.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * beta)
                z = mean + sigma * torch.randn(shape, generator=gen)
            else:
                z = mean
            if trace is not None:
                trace.append(z.clone())
    return z
