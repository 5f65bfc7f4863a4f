"""Dense depth regression supervised by sparse LiDAR returns.

A small encoder-decoder maps RGB to a positive depth map.  Depth is
normalized by a fixed max-range constant inside the network and converted
back to meters at the interface.  After fitting, the network is frozen: it
then serves conditioning, reward computation, and inference unchanged.
"""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
from sklearn.base import BaseEstimator

from .degradation import DegradationRanges, degrade
from .nnops import (
    AdamState,
    adam_step,
    derive_seed,
    freeze,
    param_hash,
    silu,
    torch_generator,
    trunc_normal_init_,
)


def masked_mse(pred, target, mask) -> torch.Tensor:
    """Mean squared error over mask-true pixels only.

    An empty mask is defined as loss 0 (with a warning); it happens when
    LiDAR dropout removes every return.
    """
    pred_t = torch.as_tensor(pred)
    target_t = torch.as_tensor(target, dtype=pred_t.dtype)
    mask_t = torch.as_tensor(mask, dtype=torch.bool)
    if pred_t.shape != target_t.shape or pred_t.shape != mask_t.shape:
        raise ValueError(
            f"shape mismatch: pred {tuple(pred_t.shape)}, target {tuple(target_t.shape)}, "
            f"mask {tuple(mask_t.shape)}"
        )
    if not bool(mask_t.any()):
        warnings.warn("masked_mse over an empty mask, defining loss as 0")
        return torch.zeros((), dtype=pred_t.dtype)
    diff = (pred_t - target_t)[mask_t]
    return (diff * diff).mean()


class DepthNet(nn.Module):
    """Encoder-decoder depth regressor with softplus positivity."""

    def __init__(self, width: int = 16, levels: int = 3, max_range: float = 50.0):
        super().__init__()
        if width < 4:
            raise ValueError(f"width must be >= 4, got {width}")
        if levels < 1:
            raise ValueError(f"levels must be >= 1, got {levels}")
        self.max_range = max_range
        chs = [width if i == 0 else 2 * width for i in range(levels)]
        self.conv_in = nn.Conv2d(3, chs[0], 3, padding=1)
        self.enc = nn.ModuleList(nn.Conv2d(c, c, 3, padding=1) for c in chs)
        self.downs = nn.ModuleList(
            nn.Conv2d(chs[i], chs[i + 1], 3, stride=2, padding=1) for i in range(levels - 1)
        )
        self.ups = nn.ModuleList(
            nn.Conv2d(chs[i + 1], chs[i], 3, padding=1) for i in range(levels - 1)
        )
        self.merge = nn.ModuleList(
            nn.Conv2d(2 * chs[i], chs[i], 3, padding=1) for i in range(levels - 1)
        )
        self.head = nn.Conv2d(chs[0], 1, 3, padding=1)

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:
        """RGB (N,3,H,W) in [0,1] -> depth in meters (N,1,H,W), strictly > 0."""
        skips = []
        h = silu(self.enc[0](self.conv_in(rgb)))
        for i, down in enumerate(self.downs):
            skips.append(h)
            h = silu(self.enc[i + 1](down(h)))
        for i in reversed(range(len(self.downs))):
            h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
            h = silu(self.ups[i](h))
            h = silu(self.merge[i](torch.cat([h, skips[i]], dim=1)))
        normalized = nn.functional.softplus(self.head(h))
        return normalized * self.max_range


class DepthRegressor(BaseEstimator):
    """Sparse-LiDAR-supervised depth estimator (frozen after fit).

    Training mixes clean renderings with online night degradations of the
    same scenes so the frozen network stays usable on dark inputs.
    """

    def __init__(
        self,
        width: int = 16,
        levels: int = 3,
        max_range: float = 50.0,
        steps: int = 1200,
        batch_size: int = 8,
        lr: float = 1e-3,
        degrade_fraction: float = 0.5,
        seed: int = 0,
    ):
        self.width = width
        self.levels = levels
        self.max_range = max_range
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.degrade_fraction = degrade_fraction
        self.seed = seed

    def fit(self, samples: Sequence, y=None, degrade_ranges: DegradationRanges | None = None):
        if not len(samples):
            raise ValueError("cannot fit a depth regressor on an empty dataset")
        ranges = degrade_ranges or DegradationRanges()
        rgb = np.stack([s.rgb for s in samples])
        sparse = np.stack([s.sparse_depth for s in samples]) / self.max_range
        mask = np.stack([s.sparse_mask for s in samples])

        net = DepthNet(self.width, self.levels, self.max_range)
        trunc_normal_init_(net, seed=derive_seed(self.seed, "depth-init"))
        params = [p for p in net.parameters() if p.requires_grad]
        state = AdamState(lr=self.lr)
        gen = torch_generator(derive_seed(self.seed, "depth-train"))
        n_degraded = int(round(self.batch_size * self.degrade_fraction))
        history = []
        for step in range(self.steps):
            idx = torch.randint(0, len(samples), (self.batch_size,), generator=gen).tolist()
            batch = []
            for j, i in enumerate(idx):
                img = rgb[i]
                if j < n_degraded:
                    img, _ = degrade(img, ranges, derive_seed(self.seed, "depth-degrade", step, j))
                batch.append(img)
            x = torch.from_numpy(np.stack(batch)).permute(0, 3, 1, 2).float()
            target = torch.from_numpy(sparse[idx])
            m = torch.from_numpy(mask[idx])
            pred = net(x)[:, 0] / self.max_range
            loss = masked_mse(pred, target, m)
            for p in params:
                p.grad = None
            loss.backward()
            adam_step(params, [p.grad for p in params], state)
            history.append(float(loss.detach()))

        self.net_ = freeze(net.eval())
        self.input_size_ = (rgb.shape[1], rgb.shape[2])
        self.loss_history_ = history
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "net_"):
            raise RuntimeError("DepthRegressor is not fitted")

    def predict_torch(self, rgb_nchw: torch.Tensor) -> torch.Tensor:
        """Differentiable prediction in meters, (N,1,H,W). Used by the reward."""
        self._check_fitted()
        if rgb_nchw.shape[-2:] != self.input_size_:
            raise ValueError(
                f"input size {tuple(rgb_nchw.shape[-2:])} != training size {self.input_size_}"
            )
        net = self.net_
        if rgb_nchw.dtype != next(net.parameters()).dtype:
            # converted copy; the frozen original must stay bit-identical
            import copy

            net = copy.deepcopy(self.net_).to(rgb_nchw.dtype)
        return net(rgb_nchw)

    def predict(self, rgb: np.ndarray) -> np.ndarray:
        """Depth in meters for HWC or NHWC inputs in [0, 1]."""
        self._check_fitted()
        single = np.asarray(rgb).ndim == 3
        arr = np.asarray(rgb, dtype=np.float32)
        if single:
            arr = arr[None]
        x = torch.from_numpy(arr).permute(0, 3, 1, 2)
        with torch.no_grad():
            out = self.predict_torch(x)[:, 0].numpy()
        return out[0] if single else out

    def parameter_hash(self) -> str:
        self._check_fitted()
        return param_hash(self.net_)

    def save_weights(self, path, config_hash: str | None = None) -> None:
        from .formats import write_ldck
        from .nnops import state_entries

        self._check_fitted()
        entries = {
            "meta/input_size": np.array(self.input_size_, dtype=np.float64),
        }
        if config_hash is not None:
            entries["meta/config_hash"] = np.frombuffer(
                bytes.fromhex(config_hash), dtype=np.uint8
            ).astype(np.float64)
        entries.update(state_entries(self.net_, "depth"))
        write_ldck(path, entries)

    def load_weights(self, path) -> "DepthRegressor":
        from .formats import read_ldck
        from .nnops import load_state_entries

        entries = read_ldck(path)
        net = DepthNet(self.width, self.levels, self.max_range)
        load_state_entries(net, entries, "depth")
        self.net_ = freeze(net.eval())
        self.input_size_ = tuple(int(v) for v in entries["meta/input_size"])
        self.loss_history_ = []
        return self
