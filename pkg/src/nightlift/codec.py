"""Latent codecs: exact identity (default) or a small trained autoencoder.

The identity codec keeps diffusion in pixel space, which makes the
acceptance identities exact.  The trained codec halves the spatial size and
is only used when explicitly configured.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .nnops import AdamState, adam_step, torch_generator, trunc_normal_init_, silu


class IdentityCodec:
    """encode and decode are the literal identity; D(E(I)) == I bitwise."""

    mode = "identity"
    reduction = 1

    def __init__(self, channels: int = 3):
        self.channels = channels

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        return images

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        return latents


class ConvCodec(nn.Module):
    """Tiny convolutional autoencoder with 2x spatial reduction.

    Latents are tanh-bounded so the diffusion prior sees roughly unit-scale
    values; decoded images are sigmoid-bounded to [0, 1].
    """

    mode = "trained"
    reduction = 2

    def __init__(self, image_channels: int = 3, channels: int = 8, hidden: int = 16):
        super().__init__()
        self.channels = channels
        self.enc1 = nn.Conv2d(image_channels, hidden, 3, padding=1)
        self.enc2 = nn.Conv2d(hidden, channels, 3, stride=2, padding=1)
        self.dec1 = nn.Conv2d(channels, hidden, 3, padding=1)
        self.dec2 = nn.Conv2d(hidden, hidden, 3, padding=1)
        self.dec3 = nn.Conv2d(hidden, image_channels, 3, padding=1)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        h = silu(self.enc1(images))
        return torch.tanh(self.enc2(h))

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        h = silu(self.dec1(latents))
        h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
        h = silu(self.dec2(h))
        return torch.sigmoid(self.dec3(h))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(images))


def train_conv_codec(
    images: np.ndarray,
    channels: int = 8,
    steps: int = 1500,
    batch_size: int = 8,
    lr: float = 3e-3,
    seed: int = 0,
) -> ConvCodec:
    """Fit the autoencoder with plain MSE reconstruction."""
    codec = ConvCodec(channels=channels)
    trunc_normal_init_(codec, seed=seed)
    data = torch.from_numpy(np.asarray(images, dtype=np.float32)).permute(0, 3, 1, 2)
    params = list(codec.parameters())
    state = AdamState(lr=lr)
    gen = torch_generator(seed)
    for _ in range(steps):
        idx = torch.randint(0, data.shape[0], (batch_size,), generator=gen)
        batch = data[idx]
        recon = codec(batch)
        loss = ((recon - batch) ** 2).mean()
        for p in params:
            p.grad = None
        loss.backward()
        adam_step(params, [p.grad for p in params], state)
    return codec
