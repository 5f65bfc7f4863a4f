"""Desk-scale low-light enhancement with a multi-condition diffusion model."""

from .camera import CameraIntrinsics, project_point, unproject_pixel
from .captions import caption_from_presence, template_caption
from .conditioning import ConditionFusion, ConditioningBundle, ControlBranch
from .degradation import (
    DegradationParams,
    DegradationRanges,
    NightDegrader,
    attenuate_and_noise,
    degrade,
    isp_render,
    srgb_to_raw,
)
from .depth import DepthRegressor, masked_mse
from .diffusion import ConditionedDenoiser, ddpm_loss, sample
from .enhancer import LowLightEnhancer
from .lidar import LidarPattern, simulate_lidar
from .metrics import NssQualityModel, PresenceProbe, evaluate_run, pixel_stats
from .recurrent import RecurrentConfig, recurrent_enhance
from .reward import RewardConfig, combined_objective, depth_reward, mmd_sq
from .scene import ImageSample, SceneSpec, generate_scene
from .schedule import NoiseSchedule, build_schedule, forward_diffuse, predict_clean_latent
from .textcond import TextEmbedder
from .unet import UNetDenoiser

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "ConditionFusion",
    "ConditionedDenoiser",
    "ConditioningBundle",
    "ControlBranch",
    "DegradationParams",
    "DegradationRanges",
    "DepthRegressor",
    "ImageSample",
    "LidarPattern",
    "LowLightEnhancer",
    "NightDegrader",
    "NoiseSchedule",
    "NssQualityModel",
    "PresenceProbe",
    "RecurrentConfig",
    "RewardConfig",
    "SceneSpec",
    "TextEmbedder",
    "UNetDenoiser",
    "attenuate_and_noise",
    "build_schedule",
    "caption_from_presence",
    "combined_objective",
    "ddpm_loss",
    "degrade",
    "depth_reward",
    "evaluate_run",
    "forward_diffuse",
    "generate_scene",
    "isp_render",
    "masked_mse",
    "mmd_sq",
    "pixel_stats",
    "predict_clean_latent",
    "project_point",
    "recurrent_enhance",
    "sample",
    "simulate_lidar",
    "srgb_to_raw",
    "template_caption",
    "unproject_pixel",
]
