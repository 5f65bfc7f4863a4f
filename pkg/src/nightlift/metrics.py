"""Perception-oriented evaluation: pixel statistics, a natural-scene-
statistics distance fitted on the clean corpus, and a multi-label presence
probe standing in for a full detector.

The NSS distance follows the classic no-reference recipe: mean-subtracted
contrast-normalized luminance coefficients are summarized per block by
asymmetric generalized Gaussian fits at two scales, and an image is scored
by the Mahalanobis-style distance between its feature statistics and the
reference model fitted on clean daytime images.
"""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
from scipy.ndimage import convolve, gaussian_filter
from scipy.special import gamma as gamma_fn
from sklearn.base import BaseEstimator

from .captions import CLASS_ORDER
from .nnops import (
    AdamState,
    adam_step,
    derive_seed,
    freeze,
    silu,
    torch_generator,
    trunc_normal_init_,
)

_LUMA = np.array([0.299, 0.587, 0.114])

_LAPLACIAN = np.array([[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]])
# |N(0,1)| has median 0.6745; the Laplacian mask has l2 norm 6
_MEDIAN_TO_SIGMA = 1.0 / 0.6745


def rec601_luma(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb, dtype=np.float64) @ _LUMA


def pixel_stats(img: np.ndarray) -> dict[str, float]:
    """Reference-free statistics: mean luma, RMS contrast, robust noise sigma."""
    luma = rec601_luma(img)
    response = convolve(luma, _LAPLACIAN, mode="constant")[1:-1, 1:-1]
    noise_sigma = _MEDIAN_TO_SIGMA * float(np.median(np.abs(response))) / 6.0
    return {
        "mean_luma": float(luma.mean()),
        "rms_contrast": float(luma.std()),
        "noise_sigma": noise_sigma,
    }


# ---------------------------------------------------------------------------
# natural-scene statistics

_GAMMA_GRID = np.linspace(0.2, 10.0, 9801)
_R_GAMMA = (gamma_fn(2.0 / _GAMMA_GRID) ** 2) / (
    gamma_fn(1.0 / _GAMMA_GRID) * gamma_fn(3.0 / _GAMMA_GRID)
)

_VARIANCE_FLOOR = 1e-6


def estimate_aggd(vec: np.ndarray) -> tuple[float, float, float]:
    """Asymmetric generalized Gaussian parameters (alpha, beta_left, beta_right)."""
    vec = np.asarray(vec, dtype=np.float64).ravel()
    neg = vec[vec < 0]
    pos = vec[vec > 0]
    left_std = np.sqrt(np.mean(neg**2)) if neg.size else 0.0
    right_std = np.sqrt(np.mean(pos**2)) if pos.size else 0.0
    left_std = max(left_std, _VARIANCE_FLOOR)
    right_std = max(right_std, _VARIANCE_FLOOR)
    gamma_hat = left_std / right_std
    r_hat = np.mean(np.abs(vec)) ** 2 / max(np.mean(vec**2), _VARIANCE_FLOOR)
    r_hat_norm = r_hat * (gamma_hat**3 + 1) * (gamma_hat + 1) / (gamma_hat**2 + 1) ** 2
    alpha = float(_GAMMA_GRID[np.argmin((_R_GAMMA - r_hat_norm) ** 2)])
    ratio = np.sqrt(gamma_fn(1.0 / alpha) / gamma_fn(3.0 / alpha))
    return alpha, left_std * ratio, right_std * ratio


def mscn_coefficients(luma: np.ndarray, sigma: float = 7.0 / 6.0) -> np.ndarray:
    mu = gaussian_filter(luma, sigma, mode="nearest")
    var = gaussian_filter(luma * luma, sigma, mode="nearest") - mu * mu
    return (luma - mu) / (np.sqrt(np.abs(var)) + 1.0)


def _block_features(mscn: np.ndarray) -> np.ndarray:
    """18 summary features of one block: MSCN fit plus 4 paired products."""
    feats = []
    alpha, bl, br = estimate_aggd(mscn)
    feats.extend([alpha, (bl + br) / 2.0])
    for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
        product = mscn * np.roll(np.roll(mscn, dy, axis=0), dx, axis=1)
        alpha, bl, br = estimate_aggd(product)
        eta = (br - bl) * (gamma_fn(2.0 / alpha) / gamma_fn(1.0 / alpha))
        feats.extend([alpha, eta, bl, br])
    return np.array(feats)


def _half_scale(luma: np.ndarray) -> np.ndarray:
    h, w = luma.shape
    return luma[: h - h % 2, : w - w % 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def nss_features(img: np.ndarray, block_size: int = 16) -> np.ndarray:
    """Per-block 36-dim features (18 per scale, two scales)."""
    luma = rec601_luma(img) * 255.0
    per_scale = []
    for scale in (1, 2):
        if scale == 2:
            luma = _half_scale(luma)
        block = block_size // scale
        mscn = mscn_coefficients(luma)
        ny, nx = mscn.shape[0] // block, mscn.shape[1] // block
        if ny < 1 or nx < 1:
            raise ValueError(f"image too small for block size {block_size}")
        feats = np.stack(
            [
                _block_features(mscn[by * block : (by + 1) * block, bx * block : (bx + 1) * block])
                for by in range(ny)
                for bx in range(nx)
            ]
        )
        per_scale.append(feats)
    return np.concatenate(per_scale, axis=1)


class NssQualityModel(BaseEstimator):
    """Reference statistics of clean daytime imagery; lower distance = closer."""

    def __init__(self, block_size: int = 16, min_images: int = 100):
        self.block_size = block_size
        self.min_images = min_images

    def fit(self, images: Sequence[np.ndarray], y=None):
        if len(images) < self.min_images:
            raise ValueError(
                f"NSS reference fit needs >= {self.min_images} images, got {len(images)}"
            )
        # fitting each image together with its mirror makes the reference
        # statistics symmetric under horizontal flips, and with them the
        # distance itself
        feats = np.concatenate(
            [
                block
                for img in images
                for block in (
                    nss_features(img, self.block_size),
                    nss_features(np.ascontiguousarray(img[:, ::-1]), self.block_size),
                )
            ],
            axis=0,
        )
        self.mean_ = feats.mean(axis=0)
        self.cov_ = np.cov(feats, rowvar=False)
        return self

    def distance(self, img: np.ndarray) -> float:
        if not hasattr(self, "mean_"):
            raise RuntimeError("NssQualityModel is not fitted")
        feats = nss_features(img, self.block_size)
        mean = feats.mean(axis=0)
        # a single-block image has no within-image covariance; fall back to
        # the reference covariance alone
        cov = np.cov(feats, rowvar=False) if feats.shape[0] >= 2 else np.zeros_like(self.cov_)
        pooled = (self.cov_ + cov) / 2.0
        diff = self.mean_ - mean
        d2 = float(diff @ np.linalg.pinv(pooled) @ diff)
        return float(np.sqrt(max(d2, 0.0)))

    def transform(self, images: Sequence[np.ndarray]) -> np.ndarray:
        return np.array([self.distance(img) for img in images])

    def save_weights(self, path, config_hash: str | None = None) -> None:
        from .formats import write_ldck

        entries = {"nss/mean": self.mean_, "nss/cov": self.cov_}
        if config_hash is not None:
            entries["meta/config_hash"] = np.frombuffer(
                bytes.fromhex(config_hash), dtype=np.uint8
            ).astype(np.float64)
        write_ldck(path, entries)

    def load_weights(self, path) -> "NssQualityModel":
        from .formats import read_ldck

        entries = read_ldck(path)
        self.mean_ = entries["nss/mean"]
        self.cov_ = entries["nss/cov"]
        return self


# ---------------------------------------------------------------------------
# perception probe

class ProbeNet(nn.Module):
    """Small CNN scoring per-class object presence."""

    def __init__(self, n_classes: int):
        super().__init__()
        chs = (16, 24, 32, 48)
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        c_in = 3
        for c in chs:
            self.convs.append(nn.Conv2d(c_in, c, 3, stride=2, padding=1))
            self.norms.append(nn.GroupNorm(4, c))
            c_in = c
        self.head = nn.Linear(chs[-1], n_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x
        for conv, norm in zip(self.convs, self.norms):
            h = silu(norm(conv(h)))
        pooled = h.mean(dim=(2, 3))
        return self.head(pooled)


def presence_labels(samples: Sequence, classes: Sequence[str] = CLASS_ORDER) -> np.ndarray:
    labels = np.zeros((len(samples), len(classes)), dtype=np.float32)
    for i, sample in enumerate(samples):
        present = {a.cls for a in sample.annotations}
        for j, cls in enumerate(classes):
            labels[i, j] = float(cls in present)
    return labels


class PresenceProbe(BaseEstimator):
    """Multi-label presence classifier trained on clean daytime samples."""

    def __init__(self, steps: int = 2400, batch_size: int = 16, lr: float = 2e-3, seed: int = 0):
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def fit(self, images: Sequence[np.ndarray], labels: np.ndarray):
        labels = np.asarray(labels, dtype=np.float32)
        if len(images) != labels.shape[0]:
            raise ValueError(f"{len(images)} images vs {labels.shape[0]} label rows")
        self.classes_ = tuple(CLASS_ORDER)
        if labels.shape[1] != len(self.classes_):
            raise ValueError(f"expected {len(self.classes_)} label columns")
        self.trained_class_mask_ = labels.max(axis=0) > 0  # classes seen at least once

        net = ProbeNet(len(self.classes_))
        trunc_normal_init_(net, seed=derive_seed(self.seed, "probe-init"))
        data = torch.from_numpy(np.stack(images).astype(np.float32)).permute(0, 3, 1, 2)
        targets = torch.from_numpy(labels)
        params = list(net.parameters())
        state = AdamState(lr=self.lr)
        gen = torch_generator(derive_seed(self.seed, "probe-train"))
        bce = nn.BCEWithLogitsLoss()
        history = []
        for _ in range(self.steps):
            idx = torch.randint(0, data.shape[0], (self.batch_size,), generator=gen)
            logits = net(data[idx])
            loss = bce(logits, targets[idx])
            for p in params:
                p.grad = None
            loss.backward()
            adam_step(params, [p.grad for p in params], state)
            history.append(float(loss.detach()))
        self.net_ = freeze(net.eval())
        self.loss_history_ = history
        return self

    def predict_proba(self, images) -> np.ndarray:
        if not hasattr(self, "net_"):
            raise RuntimeError("PresenceProbe is not fitted")
        x = torch.from_numpy(np.stack(images).astype(np.float32)).permute(0, 3, 1, 2)
        with torch.no_grad():
            return torch.sigmoid(self.net_(x)).numpy()

    def predict(self, images) -> np.ndarray:
        return self.predict_proba(images) > 0.5

    def present_classes(self, image: np.ndarray) -> list[str]:
        row = self.predict([image])[0]
        return [cls for cls, hit in zip(self.classes_, row) if hit]

    def score(self, images, labels) -> float:
        """Mean over images and trained classes of (prediction == presence)."""
        labels = np.asarray(labels, dtype=bool)
        preds = self.predict(images)
        mask = self.trained_class_mask_
        if not mask.all():
            missing = [c for c, ok in zip(self.classes_, mask) if not ok]
            warnings.warn(f"classes absent from training excluded from scoring: {missing}")
        return float((preds[:, mask] == labels[:, mask]).mean())

    def save_weights(self, path, config_hash: str | None = None) -> None:
        from .formats import write_ldck
        from .nnops import state_entries

        entries = {
            "meta/trained_class_mask": self.trained_class_mask_.astype(np.float64),
        }
        if config_hash is not None:
            entries["meta/config_hash"] = np.frombuffer(
                bytes.fromhex(config_hash), dtype=np.uint8
            ).astype(np.float64)
        entries.update(state_entries(self.net_, "probe"))
        write_ldck(path, entries)

    def load_weights(self, path) -> "PresenceProbe":
        from .formats import read_ldck
        from .nnops import load_state_entries

        entries = read_ldck(path)
        self.classes_ = tuple(CLASS_ORDER)
        self.trained_class_mask_ = entries["meta/trained_class_mask"] > 0.5
        net = ProbeNet(len(self.classes_))
        load_state_entries(net, entries, "probe")
        self.net_ = freeze(net.eval())
        return self


# ---------------------------------------------------------------------------
# run-level report

def evaluate_run(
    night_images,
    enhanced_images,
    clean_images,
    labels: np.ndarray,
    probe: PresenceProbe,
    nss_model: NssQualityModel,
) -> dict:
    """Per-method metric rows for the night / enhanced / clean columns."""
    sets = {"night": night_images, "enhanced": enhanced_images, "clean": clean_images}
    sizes = {name: len(imgs) for name, imgs in sets.items()}
    if len(set(sizes.values())) != 1 or len(labels) != sizes["night"]:
        raise ValueError(f"misaligned set sizes: {sizes}, labels={len(labels)}")
    columns = {}
    for name, images in sets.items():
        stats = [pixel_stats(img) for img in images]
        columns[name] = {
            "probe_accuracy": probe.score(images, labels),
            "nss_distance": float(np.mean(nss_model.transform(images))),
            "mean_luma": float(np.mean([s["mean_luma"] for s in stats])),
            "rms_contrast": float(np.mean([s["rms_contrast"] for s in stats])),
            "noise_sigma": float(np.mean([s["noise_sigma"] for s in stats])),
        }
    return {"columns": columns}


def save_report_plots(report: dict, path) -> None:
    """Bar chart per metric across the report columns."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    columns = report["columns"]
    names = list(columns)
    metrics = list(next(iter(columns.values())))
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3))
    for ax, metric in zip(np.atleast_1d(axes), metrics):
        ax.bar(names, [columns[n][metric] for n in names], color="#4878a8")
        ax.set_title(metric, fontsize=9)
        ax.tick_params(axis="x", rotation=45, labelsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
