import numpy as np
import pytest
import torch

from nightlift.camera import CameraIntrinsics
from nightlift.lidar import LidarPattern
from nightlift.scene import SceneSpec, generate_scene

torch.set_num_threads(1)


@pytest.fixture
def camera64():
    return CameraIntrinsics(fx=64.0, fy=64.0, cx=32.0, cy=32.0, width=64, height=64)


@pytest.fixture
def camera128():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=64.0, cy=64.0, width=128, height=128)


@pytest.fixture
def tiny_scene(camera64):
    return generate_scene(SceneSpec(), camera64, seed=11)


@pytest.fixture
def scene_batch(camera64):
    return [generate_scene(SceneSpec(), camera64, seed=100 + i) for i in range(6)]


@pytest.fixture
def quiet_lidar():
    return LidarPattern(n_beams=16, azimuth_resolution=0.01, dropout_rate=0.0, range_noise_sigma=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
