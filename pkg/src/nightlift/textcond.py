"""Caption embedding over the closed template vocabulary."""

from __future__ import annotations

from typing import Sequence

import torch
import torch.nn as nn

from . import captions
from .nnops import dense, silu


class TextEmbedder(nn.Module):
    """Mean of token embeddings followed by a 2-layer dense encoder.

    Out-of-vocabulary tokens share one reserved UNK embedding; the output is
    a single vector per caption, used as the key/value token for the
    denoiser's cross-attention.
    """

    def __init__(self, embed_dim: int = 64):
        super().__init__()
        self.embed_dim = embed_dim
        self.embedding = nn.Embedding(len(captions.VOCABULARY), embed_dim)
        self.enc1 = nn.Linear(embed_dim, embed_dim)
        self.enc2 = nn.Linear(embed_dim, embed_dim)

    def forward(self, texts: Sequence[str]) -> torch.Tensor:
        ids = [captions.encode(t) for t in texts]
        pooled = torch.stack(
            [self.embedding(torch.as_tensor(i, dtype=torch.long)).mean(dim=0) for i in ids]
        )
        h = silu(dense(pooled, self.enc1.weight, self.enc1.bias))
        return dense(h, self.enc2.weight, self.enc2.bias)
