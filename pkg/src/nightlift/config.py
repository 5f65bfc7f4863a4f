"""Experiment configuration: flat key-value sections, strict validation.

A config is a JSON object with one flat section per pipeline stage plus a
global seed.  Unknown sections or keys are rejected; values are validated
by constructing the owning objects before any work starts.  The canonical
hash of a config ties checkpoints, reports and caches together.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .datasets import default_camera
from .degradation import DegradationRanges
from .depth import DepthRegressor
from .enhancer import LowLightEnhancer
from .lidar import LidarPattern
from .metrics import NssQualityModel, PresenceProbe
from .recurrent import RecurrentConfig
from .scene import SceneSpec

DEFAULTS: dict = {
    "seed": 0,
    "scene": {
        "count": 512,
        "test_count": 64,
        "image_size": 64,
        "object_count_min": 0,
        "object_count_max": 4,
        "depth_min": 6.0,
        "depth_max": 28.0,
        "lidar_beams": 16,
        "lidar_azimuth_resolution": 0.01,
        "lidar_dropout": 0.1,
        "lidar_noise_sigma": 0.02,
    },
    "degradation": {
        "attenuation_min": 0.02,
        "attenuation_max": 0.25,
        "shot_min": 0.0,
        "shot_max": 0.05,
        "read_min": 0.0,
        "read_max": 0.03,
        "wb_min": 0.7,
        "wb_max": 1.3,
        "gamma_min": 2.2,
        "gamma_max": 2.2,
        "tone_min": 0.0,
        "tone_max": 0.5,
        "ccm_min": 0.0,
        "ccm_max": 0.3,
    },
    "depth_net": {
        "width": 16,
        "levels": 3,
        "max_range": 50.0,
        "steps": 1200,
        "batch_size": 8,
        "lr": 1e-3,
        "degrade_fraction": 0.5,
    },
    "diffusion": {
        "timesteps": 200,
        "beta_start": 1e-4,
        "beta_end": 0.05,
        "channels": [32, 64, 64],
        "time_dim": 128,
        "text_dim": 64,
        "codec_mode": "identity",
        "codec_channels": 8,
        "codec_steps": 1500,
        "base_steps": 1600,
        "control_steps": 1600,
        "batch_size": 4,
        "base_lr": 2e-4,
        "control_lr": 2e-4,
    },
    "adapter": {
        "enabled": True,
    },
    "reward": {
        "steps": 320,
        "batch_size": 8,
        "lr": 1e-4,
        "tau": 40,
        "lambda_depth": 0.1,
        "lambda_mmd": 0.1,
    },
    "reli": {
        "max_iters": 2,
        "stop_tol": 0.01,
    },
    "eval": {
        "probe_steps": 2400,
        "probe_batch_size": 16,
        "probe_lr": 2e-3,
        "nss_block_size": 16,
        "nss_min_images": 100,
    },
    "io": {
        "sample_chunk": 16,
        "plots": False,
    },
}


class ConfigError(ValueError):
    """Unknown key, wrong type, or a value violating a module invariant."""


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def smoke_config() -> dict:
    """Small fast preset: 32x32 scenes, 64 samples, 2k training steps total."""
    cfg = default_config()
    cfg["scene"].update({"count": 64, "test_count": 16, "image_size": 32})
    cfg["depth_net"].update({"steps": 200})
    cfg["diffusion"].update({"base_steps": 800, "control_steps": 800})
    cfg["reward"].update({"steps": 200})
    cfg["eval"].update({"probe_steps": 300, "nss_min_images": 48})
    return cfg


def merge_config(overrides: dict) -> dict:
    """Overlay a partial config onto the defaults, rejecting unknown keys."""
    cfg = default_config()
    for section, value in overrides.items():
        if section == "seed":
            cfg["seed"] = value
            continue
        if section not in cfg or not isinstance(value, dict):
            raise ConfigError(f"unknown config section {section!r}")
        for key, v in value.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            cfg[section][key] = v
    validate_config(cfg)
    return cfg


def load_config(path: str | Path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        overrides = json.load(f)
    return merge_config(overrides)


def save_config(cfg: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)
        f.write("\n")


def config_hash(cfg: dict) -> str:
    canonical = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def validate_config(cfg: dict) -> None:
    """Instantiate every owning object; its invariants do the checking."""
    try:
        build_scene_spec(cfg)
        build_lidar(cfg)
        build_ranges(cfg)
        build_camera(cfg)
        if cfg["scene"]["count"] < 1 or cfg["scene"]["test_count"] < 0:
            raise ValueError("scene counts must be positive")
        build_depth_regressor(cfg)
        import warnings

        from .schedule import build_schedule

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # small smoke schedules may warn
            build_schedule(
                cfg["diffusion"]["timesteps"],
                cfg["diffusion"]["beta_start"],
                cfg["diffusion"]["beta_end"],
            )
        enhancer = build_enhancer(cfg)
        enhancer.reward_config().validate(cfg["diffusion"]["timesteps"])
        RecurrentConfig(
            max_iters=cfg["reli"]["max_iters"], stop_tol=cfg["reli"]["stop_tol"], seed=0
        )
        build_probe(cfg)
        build_nss(cfg)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def build_camera(cfg: dict):
    return default_camera(cfg["scene"]["image_size"])


def build_scene_spec(cfg: dict) -> SceneSpec:
    s = cfg["scene"]
    return SceneSpec(
        object_count_range=(s["object_count_min"], s["object_count_max"]),
        depth_range=(s["depth_min"], s["depth_max"]),
    )


def build_lidar(cfg: dict) -> LidarPattern:
    s = cfg["scene"]
    return LidarPattern(
        n_beams=s["lidar_beams"],
        azimuth_resolution=s["lidar_azimuth_resolution"],
        dropout_rate=s["lidar_dropout"],
        range_noise_sigma=s["lidar_noise_sigma"],
    )


def build_ranges(cfg: dict) -> DegradationRanges:
    d = cfg["degradation"]
    return DegradationRanges(
        attenuation=(d["attenuation_min"], d["attenuation_max"]),
        shot_gain=(d["shot_min"], d["shot_max"]),
        read_sigma=(d["read_min"], d["read_max"]),
        wb_gain=(d["wb_min"], d["wb_max"]),
        gamma=(d["gamma_min"], d["gamma_max"]),
        tone_strength=(d["tone_min"], d["tone_max"]),
        ccm_strength=(d["ccm_min"], d["ccm_max"]),
    )


def build_depth_regressor(cfg: dict) -> DepthRegressor:
    d = cfg["depth_net"]
    return DepthRegressor(
        width=d["width"],
        levels=d["levels"],
        max_range=d["max_range"],
        steps=d["steps"],
        batch_size=d["batch_size"],
        lr=d["lr"],
        degrade_fraction=d["degrade_fraction"],
        seed=cfg["seed"],
    )


def build_enhancer(
    cfg: dict,
    depth_model=None,
    captioner=None,
    use_fusion: bool | None = None,
    use_depth_condition: bool = True,
    use_text_condition: bool = True,
    max_iters: int | None = None,
) -> LowLightEnhancer:
    d = cfg["diffusion"]
    r = cfg["reward"]
    return LowLightEnhancer(
        image_size=cfg["scene"]["image_size"],
        channels=tuple(d["channels"]),
        time_dim=d["time_dim"],
        text_dim=d["text_dim"],
        timesteps=d["timesteps"],
        beta_start=d["beta_start"],
        beta_end=d["beta_end"],
        codec_mode=d["codec_mode"],
        codec_channels=d["codec_channels"],
        codec_steps=d["codec_steps"],
        base_steps=d["base_steps"],
        control_steps=d["control_steps"],
        batch_size=d["batch_size"],
        base_lr=d["base_lr"],
        control_lr=d["control_lr"],
        finetune_steps=r["steps"],
        finetune_batch_size=r["batch_size"],
        finetune_lr=r["lr"],
        reward_tau=r["tau"],
        reward_lambda_depth=r["lambda_depth"],
        reward_lambda_mmd=r["lambda_mmd"],
        use_fusion=cfg["adapter"]["enabled"] if use_fusion is None else use_fusion,
        use_depth_condition=use_depth_condition,
        use_text_condition=use_text_condition,
        max_iters=cfg["reli"]["max_iters"] if max_iters is None else max_iters,
        stop_tol=cfg["reli"]["stop_tol"],
        sample_chunk=cfg["io"]["sample_chunk"],
        depth_model=depth_model,
        captioner=captioner,
        degrade_ranges=build_ranges(cfg),
        seed=cfg["seed"],
    )


def build_probe(cfg: dict) -> PresenceProbe:
    e = cfg["eval"]
    return PresenceProbe(
        steps=e["probe_steps"],
        batch_size=e["probe_batch_size"],
        lr=e["probe_lr"],
        seed=cfg["seed"],
    )


def build_nss(cfg: dict) -> NssQualityModel:
    e = cfg["eval"]
    return NssQualityModel(block_size=e["nss_block_size"], min_images=e["nss_min_images"])
