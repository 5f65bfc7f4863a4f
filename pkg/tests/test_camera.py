import numpy as np
import pytest

from nightlift.camera import (
    BehindCameraError,
    CameraIntrinsics,
    project_point,
    unproject_pixel,
)


def test_principal_axis_point(camera128):
    u, v, depth, inside = project_point((0.0, 0.0, 10.0), camera128)
    assert (u, v, depth) == (64.0, 64.0, 10.0)
    assert inside


def test_hand_evaluated_pinhole(camera128):
    # u = fx*x/z + cx = 100*1/10 + 64 = 74
    u, v, depth, inside = project_point((1.0, 0.0, 10.0), camera128)
    assert (u, v, depth) == (74.0, 64.0, 10.0)
    assert inside


def test_behind_camera_raises(camera128):
    with pytest.raises(BehindCameraError):
        project_point((0.0, 0.0, -1.0), camera128)
    with pytest.raises(BehindCameraError):
        project_point((1.0, 1.0, 0.0), camera128)


def test_out_of_frustum_flag(camera128):
    *_, inside = project_point((100.0, 0.0, 10.0), camera128)
    assert not inside


def test_unproject_inverts_project(camera128, rng):
    for _ in range(200):
        p = rng.uniform([-5, -5, 1], [5, 5, 40])
        u, v, depth, _ = project_point(p, camera128)
        back = unproject_pixel(u, v, depth, camera128)
        assert np.allclose(back, p, atol=1e-9)


def test_intrinsics_invariants():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=-1, fy=1, cx=0, cy=0, width=10, height=10)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=1, fy=1, cx=10, cy=0, width=10, height=10)
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=1, fy=1, cx=0, cy=-2, width=10, height=10)
