"""The low-light enhancement estimator.

Training runs in three stages sharing one seed-derivation scheme:

1. base: the denoiser UNet and caption embedder learn the clean daytime
   distribution (text-conditioned denoising).
2. control: the backbone is frozen; the condition-fusion stage and the
   control branch learn to steer sampling from (night latent, depth latent,
   caption).  Night inputs are degraded online, a fresh draw per step.
3. finetune: reward-guided fine-tuning of the same trainable parts with the
   depth-consistency and distribution losses gated by timestep.

transform() runs recurrent inference: caption and depth are re-derived from
each successive output until the images stabilize.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .codec import ConvCodec, IdentityCodec, train_conv_codec
from .conditioning import ConditioningBundle, ConditionFusion, ControlBranch
from .degradation import DegradationRanges, degrade
from .diffusion import ConditionedDenoiser, ddpm_loss, sample
from .formats import read_ldck, write_ldck
from .nnops import (
    AdamState,
    adam_state_entries,
    adam_step,
    derive_seed,
    freeze,
    load_adam_state,
    load_state_entries,
    state_entries,
    torch_generator,
    trunc_normal_init_,
)
from .recurrent import RecurrentConfig, recurrent_enhance_batch
from .reward import RewardConfig, combined_objective
from .schedule import build_schedule
from .textcond import TextEmbedder
from .unet import UNetDenoiser

_FALLBACK_CAPTION = "a daytime road scene, empty road"


def depth_to_condition(depth: np.ndarray) -> np.ndarray:
    """Min-max normalize depth maps to [0, 1] and replicate to 3 channels."""
    depth = np.asarray(depth, dtype=np.float32)
    if depth.ndim == 2:
        depth = depth[None]
    lo = depth.min(axis=(1, 2), keepdims=True)
    hi = depth.max(axis=(1, 2), keepdims=True)
    normalized = (depth - lo) / np.maximum(hi - lo, 1e-6)
    return np.repeat(normalized[:, :, :, None], 3, axis=3)


class LowLightEnhancer(BaseEstimator):
    """fit on day scenes with online night degradation; transform night images."""

    def __init__(
        self,
        image_size: int = 64,
        channels: tuple[int, int, int] = (32, 64, 64),
        time_dim: int = 128,
        text_dim: int = 64,
        timesteps: int = 200,
        beta_start: float = 1e-4,
        beta_end: float = 0.05,
        codec_mode: str = "identity",
        codec_channels: int = 8,
        codec_steps: int = 1500,
        base_steps: int = 1600,
        control_steps: int = 1600,
        batch_size: int = 4,
        base_lr: float = 2e-4,
        control_lr: float = 2e-4,
        finetune_steps: int = 320,
        finetune_batch_size: int = 8,
        finetune_lr: float = 1e-4,
        reward_tau: int | None = None,
        reward_lambda_depth: float = 0.1,
        reward_lambda_mmd: float = 0.1,
        reward_bandwidth: float | None = None,
        use_fusion: bool = True,
        use_depth_condition: bool = True,
        use_text_condition: bool = True,
        max_iters: int = 2,
        stop_tol: float = 0.01,
        sample_chunk: int = 16,
        depth_model=None,
        captioner=None,
        degrade_ranges: DegradationRanges | None = None,
        seed: int = 0,
    ):
        self.image_size = image_size
        self.channels = channels
        self.time_dim = time_dim
        self.text_dim = text_dim
        self.timesteps = timesteps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.codec_mode = codec_mode
        self.codec_channels = codec_channels
        self.codec_steps = codec_steps
        self.base_steps = base_steps
        self.control_steps = control_steps
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.control_lr = control_lr
        self.finetune_steps = finetune_steps
        self.finetune_batch_size = finetune_batch_size
        self.finetune_lr = finetune_lr
        self.reward_tau = reward_tau
        self.reward_lambda_depth = reward_lambda_depth
        self.reward_lambda_mmd = reward_lambda_mmd
        self.reward_bandwidth = reward_bandwidth
        self.use_fusion = use_fusion
        self.use_depth_condition = use_depth_condition
        self.use_text_condition = use_text_condition
        self.max_iters = max_iters
        self.stop_tol = stop_tol
        self.sample_chunk = sample_chunk
        self.depth_model = depth_model
        self.captioner = captioner
        self.degrade_ranges = degrade_ranges
        self.seed = seed

    # -- latent space ------------------------------------------------------

    def _build_codec(self, images: np.ndarray) -> None:
        if self.codec_mode == "identity":
            self.codec_ = IdentityCodec()
        elif self.codec_mode == "trained":
            self.codec_ = train_conv_codec(
                images,
                channels=self.codec_channels,
                steps=self.codec_steps,
                seed=derive_seed(self.seed, "codec"),
            )
            freeze(self.codec_.eval())
        else:
            raise ValueError(f"unknown codec_mode {self.codec_mode!r}")

    @property
    def latent_channels(self) -> int:
        return 3 if self.codec_mode == "identity" else self.codec_channels

    def encode_images(self, images: np.ndarray | torch.Tensor) -> torch.Tensor:
        """NHWC [0,1] images -> diffusion-space latents (NCHW, roughly [-1,1])."""
        if isinstance(images, np.ndarray):
            images = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
        x = images.permute(0, 3, 1, 2) if images.shape[-1] == 3 else images
        with torch.no_grad():
            lat = self.codec_.encode(x)
        if self.codec_.mode == "identity":
            lat = 2.0 * lat - 1.0
        return lat

    def decode_latents(self, latents: torch.Tensor) -> torch.Tensor:
        """Diffusion-space latents -> NCHW images in [0,1] (differentiable)."""
        if self.codec_.mode == "identity":
            return (latents + 1.0) / 2.0
        return self.codec_.decode(latents)

    # -- model assembly -----------------------------------------------------

    def _model(self) -> ConditionedDenoiser:
        return ConditionedDenoiser(
            self.backbone_,
            self.text_embedder_,
            getattr(self, "fusion_", None),
            getattr(self, "branch_", None),
            use_fusion=self.use_fusion,
            zero_depth=not self.use_depth_condition,
            zero_text=not self.use_text_condition,
        )

    def _ranges(self) -> DegradationRanges:
        return self.degrade_ranges or DegradationRanges()

    def _require_depth_model(self):
        if self.depth_model is None:
            raise ValueError("a fitted depth_model is required for this stage")
        return self.depth_model

    def _night_batch(self, images: np.ndarray, stage: str, step: int) -> np.ndarray:
        ranges = self._ranges()
        nights = [
            degrade(img, ranges, derive_seed(self.seed, stage + "-degrade", step, j))[0]
            for j, img in enumerate(images)
        ]
        return np.stack(nights)

    def _bundle(self, nights: np.ndarray, captions: list[str]) -> ConditioningBundle:
        depth_model = self._require_depth_model()
        depths = depth_model.predict(nights)
        f_deg = self.encode_images(nights)
        f_dep = self.encode_images(depth_to_condition(depths))
        with torch.no_grad():
            c_t = self.text_embedder_(captions)
        return ConditioningBundle(f_deg, f_dep, c_t)

    # -- training stages ----------------------------------------------------

    def fit(self, samples, y=None, log_fn=None):
        self.fit_base(samples, log_fn=log_fn)
        self.fit_control(samples, log_fn=log_fn)
        return self

    def resume_fit(self, samples, log_fn=None):
        """Run whatever remains of the base and control stages.

        Together with per-step derived seeds and the stored optimizer state
        this reproduces an uninterrupted run exactly.
        """
        if not hasattr(self, "backbone_"):
            return self.fit(samples, log_fn=log_fn)
        images = np.stack([s.rgb for s in samples]).astype(np.float32)
        captions = [s.caption for s in samples]
        if self.base_step_ < self.base_steps:
            if not hasattr(self, "_base_adam"):
                self._base_adam = AdamState(lr=self.base_lr)
            self._run_base_steps(images, captions, self.base_steps - self.base_step_, log_fn)
        if self.base_step_ >= self.base_steps and not hasattr(self, "branch_"):
            return self.fit_control(samples, log_fn=log_fn)
        if getattr(self, "branch_", None) is not None and self.control_step_ < self.control_steps:
            if not hasattr(self, "_control_adam"):
                self._control_adam = AdamState(lr=self.control_lr)
            self._run_control_steps(
                images, captions, self.control_steps - self.control_step_, log_fn
            )
        return self

    def fit_base(self, samples, log_fn=None):
        """Stage 1: train the text-conditioned denoiser on clean images."""
        if not len(samples):
            raise ValueError("cannot fit on an empty dataset")
        images = np.stack([s.rgb for s in samples]).astype(np.float32)
        captions = [s.caption for s in samples]
        self._build_codec(images)

        self.sched_ = build_schedule(self.timesteps, self.beta_start, self.beta_end)
        self.text_embedder_ = TextEmbedder(self.text_dim)
        trunc_normal_init_(self.text_embedder_, seed=derive_seed(self.seed, "init-text"))
        self.backbone_ = UNetDenoiser(
            self.latent_channels, self.channels, self.time_dim, self.text_dim
        )
        trunc_normal_init_(self.backbone_, seed=derive_seed(self.seed, "init-backbone"))
        self.base_step_ = 0
        self.control_step_ = 0
        self.finetune_step_ = 0
        self.base_log_ = []
        self.control_log_ = []
        self.finetune_log_ = []
        self._base_adam = AdamState(lr=self.base_lr)
        self._run_base_steps(images, captions, self.base_steps, log_fn)
        return self

    def _run_base_steps(self, images, captions, n_steps, log_fn=None):
        model = ConditionedDenoiser(self.backbone_, self.text_embedder_)
        params = list(self.backbone_.parameters()) + list(self.text_embedder_.parameters())
        zeros = None
        for _ in range(n_steps):
            step = self.base_step_
            gen = torch_generator(derive_seed(self.seed, "base", step))
            idx = torch.randint(0, len(images), (self.batch_size,), generator=gen).tolist()
            latents = self.encode_images(images[idx])
            if zeros is None or zeros.shape != latents.shape:
                zeros = torch.zeros_like(latents)
            # the embedder trains jointly with the backbone in this stage
            c_t = self.text_embedder_([captions[i] for i in idx])
            bundle = ConditioningBundle(zeros, zeros, c_t)
            loss, _ = ddpm_loss(model, latents, bundle, self.sched_, gen)
            for p in params:
                p.grad = None
            loss.backward()
            adam_step(params, [p.grad for p in params], self._base_adam)
            self.base_step_ += 1
            row = {"stage": "base", "step": self.base_step_, "L_Lighting": float(loss.detach())}
            self.base_log_.append(row)
            if log_fn:
                log_fn(row)

    def fit_control(self, samples, log_fn=None):
        """Stage 2: freeze the backbone, train fusion and control branch."""
        self._require_depth_model()
        if not hasattr(self, "backbone_"):
            raise RuntimeError("fit_base must run before fit_control")
        freeze(self.backbone_)
        freeze(self.text_embedder_)
        c = self.latent_channels
        if self.use_fusion:
            self.fusion_ = ConditionFusion(c)
            trunc_normal_init_(self.fusion_, seed=derive_seed(self.seed, "init-fusion"))
        else:
            self.fusion_ = None
        self.branch_ = ControlBranch(self.backbone_, cond_channels=2 * c)
        self.control_step_ = 0
        self._control_adam = AdamState(lr=self.control_lr)
        images = np.stack([s.rgb for s in samples]).astype(np.float32)
        captions = [s.caption for s in samples]
        self._run_control_steps(images, captions, self.control_steps, log_fn)
        return self

    def _run_control_steps(self, images, captions, n_steps, log_fn=None):
        model = self._model()
        params = model.trainable_parameters()
        for _ in range(n_steps):
            step = self.control_step_
            gen = torch_generator(derive_seed(self.seed, "control", step))
            idx = torch.randint(0, len(images), (self.batch_size,), generator=gen).tolist()
            clean = images[idx]
            nights = self._night_batch(clean, "control", step)
            bundle = self._bundle(nights, [captions[i] for i in idx])
            latents = self.encode_images(clean)
            loss, _ = ddpm_loss(model, latents, bundle, self.sched_, gen)
            for p in params:
                p.grad = None
            loss.backward()
            adam_step(params, [p.grad for p in params], self._control_adam)
            self.control_step_ += 1
            row = {"stage": "control", "step": self.control_step_, "L_Lighting": float(loss.detach())}
            self.control_log_.append(row)
            if log_fn:
                log_fn(row)

    def reward_config(self) -> RewardConfig:
        tau = self.reward_tau if self.reward_tau is not None else self.timesteps // 5
        return RewardConfig(
            tau=tau,
            lambda_depth=self.reward_lambda_depth,
            lambda_mmd=self.reward_lambda_mmd,
            bandwidth=self.reward_bandwidth,
        )

    def finetune(self, samples, log_fn=None):
        """Stage 3: reward-guided fine-tuning of fusion + branch."""
        depth_model = self._require_depth_model()
        if not hasattr(self, "branch_"):
            raise RuntimeError("fit_control must run before finetune")
        cfg = self.reward_config()
        cfg.validate(self.timesteps)
        images = np.stack([s.rgb for s in samples]).astype(np.float32)
        captions = [s.caption for s in samples]
        sparse = np.stack([s.sparse_depth for s in samples]).astype(np.float32)
        masks = np.stack([s.sparse_mask for s in samples])
        if self.finetune_step_ == 0 or not hasattr(self, "_finetune_adam"):
            self._finetune_adam = AdamState(lr=self.finetune_lr)
        model = self._model()
        params = model.trainable_parameters()
        remaining = self.finetune_steps - self.finetune_step_
        for _ in range(remaining):
            step = self.finetune_step_
            gen = torch_generator(derive_seed(self.seed, "finetune", step))
            idx = torch.randint(
                0, len(images), (self.finetune_batch_size,), generator=gen
            ).tolist()
            clean = images[idx]
            nights = self._night_batch(clean, "finetune", step)
            bundle = self._bundle(nights, [captions[i] for i in idx])
            latents = self.encode_images(clean)
            sparse_t = torch.from_numpy(sparse[idx])
            mask_t = torch.from_numpy(masks[idx])
            loss, diag = combined_objective(
                model,
                latents,
                bundle,
                latents,
                sparse_t,
                mask_t,
                self.sched_,
                cfg,
                gen,
                self.decode_latents,
                depth_model,
            )
            for p in params:
                p.grad = None
            loss.backward()
            adam_step(params, [p.grad for p in params], self._finetune_adam)
            self.finetune_step_ += 1
            row = {"stage": "finetune", "step": self.finetune_step_, **diag}
            self.finetune_log_.append(row)
            if log_fn:
                log_fn(row)
        return self

    # -- inference ----------------------------------------------------------

    def _derive_captions(self, images: np.ndarray) -> list[str]:
        if self.captioner is None:
            return [_FALLBACK_CAPTION] * len(images)
        return [self.captioner(img) for img in images]

    def enhance_batch_once(
        self, images: np.ndarray, captions: list[str], depths: np.ndarray, seed: int
    ) -> np.ndarray:
        """One conditioned sampling pass over a batch of [0,1] images."""
        model = self._model()
        f_deg = self.encode_images(np.asarray(images, dtype=np.float32))
        f_dep = self.encode_images(depth_to_condition(depths))
        with torch.no_grad():
            c_t = self.text_embedder_(captions)
        outs = []
        for lo in range(0, f_deg.shape[0], self.sample_chunk):
            hi = min(lo + self.sample_chunk, f_deg.shape[0])
            bundle = ConditioningBundle(f_deg[lo:hi], f_dep[lo:hi], c_t[lo:hi])
            z = sample(
                model,
                bundle,
                self.sched_,
                f_deg[lo:hi].shape,
                seed=derive_seed(self.seed, "sample", seed, lo),
            )
            with torch.no_grad():
                imgs = self.decode_latents(z).clamp(0.0, 1.0)
            outs.append(imgs.permute(0, 2, 3, 1).numpy())
        return np.concatenate(outs, axis=0)

    def transform(self, nights: np.ndarray) -> np.ndarray:
        enhanced, _ = self.transform_with_traces(nights)
        return enhanced

    def transform_with_traces(self, nights: np.ndarray):
        if not hasattr(self, "branch_"):
            raise RuntimeError("enhancer is not fitted")
        depth_model = self._require_depth_model()
        cfg = RecurrentConfig(max_iters=self.max_iters, stop_tol=self.stop_tol, seed=self.seed)
        return recurrent_enhance_batch(
            np.asarray(nights, dtype=np.float32),
            self.enhance_batch_once,
            self._derive_captions,
            lambda imgs: depth_model.predict(imgs),
            cfg,
        )

    # -- persistence ---------------------------------------------------------

    def save_weights(self, path: str | Path, config_hash: str | None = None) -> None:
        entries: dict[str, np.ndarray] = {
            "meta/steps": np.array(
                [self.base_step_, self.control_step_, self.finetune_step_], dtype=np.float64
            ),
        }
        if config_hash is not None:
            entries["meta/config_hash"] = np.frombuffer(
                bytes.fromhex(config_hash), dtype=np.uint8
            ).astype(np.float64)
        entries.update(state_entries(self.backbone_, "denoiser"))
        entries.update(state_entries(self.text_embedder_, "text"))
        if getattr(self, "fusion_", None) is not None:
            entries.update(state_entries(self.fusion_, "adapter"))
        if getattr(self, "branch_", None) is not None:
            entries.update(state_entries(self.branch_, "control"))
        if self.codec_.mode == "trained":
            entries.update(state_entries(self.codec_, "codec"))
        for name in ("_base_adam", "_control_adam", "_finetune_adam"):
            state = getattr(self, name, None)
            if state is not None and state.m:
                entries.update(adam_state_entries(state, f"optim/{name[1:]}"))
        write_ldck(path, entries)

    def load_weights(self, path: str | Path) -> "LowLightEnhancer":
        entries = read_ldck(path)
        self.sched_ = build_schedule(self.timesteps, self.beta_start, self.beta_end)
        steps = entries["meta/steps"]
        self.base_step_ = int(steps[0])
        self.control_step_ = int(steps[1])
        self.finetune_step_ = int(steps[2])
        self.base_log_ = []
        self.control_log_ = []
        self.finetune_log_ = []

        if self.codec_mode == "trained":
            self.codec_ = ConvCodec(channels=self.codec_channels)
            load_state_entries(self.codec_, entries, "codec")
            freeze(self.codec_.eval())
        else:
            self.codec_ = IdentityCodec()
        self.text_embedder_ = TextEmbedder(self.text_dim)
        load_state_entries(self.text_embedder_, entries, "text")
        self.backbone_ = UNetDenoiser(
            self.latent_channels, self.channels, self.time_dim, self.text_dim
        )
        load_state_entries(self.backbone_, entries, "denoiser")
        if any(k.startswith("control/") for k in entries):
            freeze(self.backbone_)
            freeze(self.text_embedder_)
            if any(k.startswith("adapter/") for k in entries):
                self.fusion_ = ConditionFusion(self.latent_channels)
                load_state_entries(self.fusion_, entries, "adapter")
            else:
                self.fusion_ = None
            self.branch_ = ControlBranch(self.backbone_, cond_channels=2 * self.latent_channels)
            load_state_entries(self.branch_, entries, "control")
        for name, lr in (
            ("_base_adam", self.base_lr),
            ("_control_adam", self.control_lr),
            ("_finetune_adam", self.finetune_lr),
        ):
            prefix = f"optim/{name[1:]}"
            if f"{prefix}/step" in entries:
                params = (
                    list(self.backbone_.parameters()) + list(self.text_embedder_.parameters())
                    if name == "_base_adam"
                    else self._model().trainable_parameters()
                )
                setattr(self, name, load_adam_state(entries, prefix, params))
        return self

    @staticmethod
    def stored_config_hash(path: str | Path) -> str | None:
        entries = read_ldck(path)
        if "meta/config_hash" not in entries:
            return None
        return bytes(entries["meta/config_hash"].astype(np.uint8)).hex()
