"""Denoising UNet with text cross-attention and decoder residual ports.

Three scales by default (full, 1/2, 1/4 resolution).  The decoder exposes
one residual-injection port per scale: an external control branch may hand
in a residual per skip connection, which is added before the skip is
consumed.  With no residuals the network is a plain conditional denoiser.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from .nnops import attention, conv2d, dense, group_norm, silu, upsample_nearest


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos timestep features, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype) / max(half - 1, 1)
    )
    args = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def _groups_for(channels: int) -> int:
    # every group keeps >= 2 channels so statistics stay defined even at a
    # 1x1 bottleneck
    for g in (8, 4, 2, 1):
        if channels % g == 0 and channels // g >= 2:
            return g
    return 1


class ResBlock(nn.Module):
    """conv/GN/SiLU pair with additive timestep embedding and shortcut."""

    def __init__(self, c_in: int, c_out: int, time_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(_groups_for(c_out), c_out)
        self.time_proj = nn.Linear(time_dim, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups_for(c_out), c_out)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = silu(group_norm(conv2d(x, self.conv1.weight, self.conv1.bias, padding=1),
                            self.norm1.num_groups, self.norm1.weight, self.norm1.bias))
        h = h + dense(temb, self.time_proj.weight, self.time_proj.bias)[:, :, None, None]
        h = silu(group_norm(conv2d(h, self.conv2.weight, self.conv2.bias, padding=1),
                            self.norm2.num_groups, self.norm2.weight, self.norm2.bias))
        return h + self.skip(x)


class TextCrossAttention(nn.Module):
    """Cross-attention from spatial positions to the caption embedding."""

    def __init__(self, channels: int, text_dim: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups_for(channels), channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(text_dim, channels, bias=False)
        self.to_v = nn.Linear(text_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, c_t: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        normed = group_norm(x, self.norm.num_groups, self.norm.weight, self.norm.bias)
        q = dense(normed.reshape(b, c, h * w).transpose(1, 2), self.to_q.weight)
        tokens = c_t[:, None, :]  # single caption token per sample
        k = dense(tokens, self.to_k.weight)
        v = dense(tokens, self.to_v.weight)
        attended = attention(q, k, v)
        out = dense(attended, self.to_out.weight, self.to_out.bias)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class UNetDenoiser(nn.Module):
    """Noise predictor eps(z_t, t, c_t) with per-scale decoder residual ports."""

    def __init__(
        self,
        latent_channels: int = 3,
        channels: tuple[int, int, int] = (32, 64, 64),
        time_dim: int = 128,
        text_dim: int = 64,
    ):
        super().__init__()
        self.latent_channels = latent_channels
        self.channels = tuple(channels)
        self.time_dim = time_dim
        self.text_dim = text_dim
        c0, c1, c2 = self.channels

        self.conv_in = nn.Conv2d(latent_channels, c0, 3, padding=1)
        self.time_fc1 = nn.Linear(time_dim, time_dim)
        self.time_fc2 = nn.Linear(time_dim, time_dim)

        self.enc1 = ResBlock(c0, c0, time_dim)
        self.down1 = nn.Conv2d(c0, c1, 3, stride=2, padding=1)
        self.enc2 = ResBlock(c1, c1, time_dim)
        self.down2 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.enc3 = ResBlock(c2, c2, time_dim)

        self.mid1 = ResBlock(c2, c2, time_dim)
        self.mid_attn = TextCrossAttention(c2, text_dim)
        self.mid2 = ResBlock(c2, c2, time_dim)

        self.dec3 = ResBlock(c2 + c2, c1, time_dim)
        self.up2 = nn.Conv2d(c1, c1, 3, padding=1)
        self.dec2 = ResBlock(c1 + c1, c0, time_dim)
        self.up1 = nn.Conv2d(c0, c0, 3, padding=1)
        self.dec1 = ResBlock(c0 + c0, c0, time_dim)
        self.conv_out = nn.Conv2d(c0, latent_channels, 3, padding=1)

    @property
    def n_scales(self) -> int:
        return 3

    def time_embedding(self, t: torch.Tensor) -> torch.Tensor:
        h = sinusoidal_embedding(t, self.time_dim)
        h = silu(dense(h, self.time_fc1.weight, self.time_fc1.bias))
        return dense(h, self.time_fc2.weight, self.time_fc2.bias)

    def encode(self, z: torch.Tensor, temb: torch.Tensor):
        """Encoder features per scale, finest first."""
        h1 = self.enc1(self.conv_in(z), temb)
        h2 = self.enc2(self.down1(h1), temb)
        h3 = self.enc3(self.down2(h2), temb)
        return h1, h2, h3

    def forward(
        self,
        z: torch.Tensor,
        t: torch.Tensor,
        c_t: torch.Tensor,
        residuals: list[torch.Tensor] | None = None,
    ) -> torch.Tensor:
        if z.shape[1] != self.latent_channels:
            raise ValueError(
                f"latent has {z.shape[1]} channels, model expects {self.latent_channels}"
            )
        if residuals is not None and len(residuals) != self.n_scales:
            raise ValueError(
                f"expected {self.n_scales} residuals (one per decoder scale), got {len(residuals)}"
            )
        temb = self.time_embedding(t.to(z.dtype))
        h1, h2, h3 = self.encode(z, temb)
        if residuals is not None:
            h1 = h1 + residuals[0]
            h2 = h2 + residuals[1]
            h3 = h3 + residuals[2]

        m = self.mid1(h3, temb)
        m = self.mid_attn(m, c_t)
        m = self.mid2(m, temb)

        d = self.dec3(torch.cat([m, h3], dim=1), temb)
        d = self.up2(upsample_nearest(d))
        d = self.dec2(torch.cat([d, h2], dim=1), temb)
        d = self.up1(upsample_nearest(d))
        d = self.dec1(torch.cat([d, h1], dim=1), temb)
        return self.conv_out(d)
