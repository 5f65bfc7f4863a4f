"""Condition fusion and the trainable control branch.

Two condition latents (degraded image and depth map) are stacked along
channels and re-weighted by channel attention: the stacked features, seen
as 2C vectors of length H*W, define a 2C x 2C affinity matrix whose
row-softmax gives the weight of every channel on every other.  The attended
stack is residually added and split back into two C-channel outputs.

The control branch is a trainable copy of the denoiser encoder.  It
consumes the fused conditions concatenated with the noisy latent and emits
one residual per decoder scale, each through a zero-initialized 1x1
convolution so that at initialization the conditioned denoiser equals the
unconditioned one exactly.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
import torch.nn as nn

from .nnops import conv2d, dense, softmax, zero_module
from .unet import UNetDenoiser


@dataclass
class ConditioningBundle:
    """Latent conditions handed to the control branch."""

    deg_latent: torch.Tensor  # B x C x H x W, degraded/night image latent
    depth_latent: torch.Tensor  # B x C x H x W, depth-map latent
    text_embedding: torch.Tensor  # B x text_dim

    def __post_init__(self) -> None:
        if self.deg_latent.shape != self.depth_latent.shape:
            raise ValueError(
                f"condition latents must share a shape, got "
                f"{tuple(self.deg_latent.shape)} vs {tuple(self.depth_latent.shape)}"
            )


def affinity_weights(stack2d: torch.Tensor) -> torch.Tensor:
    """Row-softmax channel affinity for a (B, 2C, H*W) stack.

    Entry (i, j) is the softmax-normalized dot product of channels i and j;
    each row sums to one.
    """
    logits = torch.matmul(stack2d, stack2d.transpose(1, 2))
    return softmax(logits, dim=-1)


class ConditionFusion(nn.Module):
    """Channel-attention fusion of two C-channel condition latents."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.pre = nn.Conv2d(2 * channels, 2 * channels, 1)
        self.proj_deg = nn.Conv2d(2 * channels, channels, 1)
        self.proj_dep = nn.Conv2d(2 * channels, channels, 1)

    def forward(
        self, f_deg: torch.Tensor, f_dep: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        if f_deg.shape != f_dep.shape:
            raise ValueError(
                f"condition shapes differ: {tuple(f_deg.shape)} vs {tuple(f_dep.shape)}"
            )
        b, c, h, w = f_deg.shape
        if c != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {c}")
        stack = conv2d(torch.cat([f_deg, f_dep], dim=1), self.pre.weight, self.pre.bias)
        flat = stack.reshape(b, 2 * c, h * w)
        weights = affinity_weights(flat)
        attended = torch.matmul(weights.transpose(1, 2), flat)
        fused = (attended + flat).reshape(b, 2 * c, h, w)
        out_deg = conv2d(fused, self.proj_deg.weight, self.proj_deg.bias)
        out_dep = conv2d(fused, self.proj_dep.weight, self.proj_dep.bias)
        return out_deg, out_dep


class ControlBranch(nn.Module):
    """Trainable encoder copy injecting per-scale residuals into the decoder.

    The copy is initialized from the backbone encoder; the input convolution
    is widened to accept concat(conditions, z_t), with the extra condition
    channels starting at zero weight.  The caption embedding enters through a
    zero-initialized projection added to the timestep embedding, so at
    initialization the branch computes exactly what the backbone encoder
    computes and every residual is exactly zero.
    """

    def __init__(self, backbone: UNetDenoiser, cond_channels: int):
        super().__init__()
        self.cond_channels = cond_channels
        latent_ch = backbone.latent_channels
        c0, c1, c2 = backbone.channels

        self.conv_in = nn.Conv2d(cond_channels + latent_ch, c0, 3, padding=1)
        with torch.no_grad():
            self.conv_in.weight.zero_()
            # condition channels come first; the z_t slice copies the backbone
            self.conv_in.weight[:, cond_channels:] = backbone.conv_in.weight
            self.conv_in.bias.copy_(backbone.conv_in.bias)

        self.time_fc1 = copy.deepcopy(backbone.time_fc1)
        self.time_fc2 = copy.deepcopy(backbone.time_fc2)
        self.text_to_time = zero_module(nn.Linear(backbone.text_dim, backbone.time_dim))
        self.time_dim = backbone.time_dim

        self.enc1 = copy.deepcopy(backbone.enc1)
        self.down1 = copy.deepcopy(backbone.down1)
        self.enc2 = copy.deepcopy(backbone.enc2)
        self.down2 = copy.deepcopy(backbone.down2)
        self.enc3 = copy.deepcopy(backbone.enc3)

        self.zero_convs = nn.ModuleList(
            [zero_module(nn.Conv2d(c, c, 1)) for c in (c0, c1, c2)]
        )

    def forward(
        self,
        cond: torch.Tensor,
        z_t: torch.Tensor,
        t: torch.Tensor,
        c_t: torch.Tensor,
    ) -> list[torch.Tensor]:
        if cond.shape[1] != self.cond_channels:
            raise ValueError(
                f"expected {self.cond_channels} condition channels, got {cond.shape[1]}"
            )
        from .unet import sinusoidal_embedding
        from .nnops import silu

        temb = sinusoidal_embedding(t.to(z_t.dtype), self.time_dim)
        temb = silu(dense(temb, self.time_fc1.weight, self.time_fc1.bias))
        temb = dense(temb, self.time_fc2.weight, self.time_fc2.bias)
        temb = temb + dense(c_t, self.text_to_time.weight, self.text_to_time.bias)

        h1 = self.enc1(self.conv_in(torch.cat([cond, z_t], dim=1)), temb)
        h2 = self.enc2(self.down1(h1), temb)
        h3 = self.enc3(self.down2(h2), temb)
        return [
            conv2d(h, zc.weight, zc.bias)
            for h, zc in zip((h1, h2, h3), self.zero_convs)
        ]
