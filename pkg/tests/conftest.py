"""Shared fixtures: cameras and analytic scenes."""

import numpy as np
import pytest

from services.depth_sampling.models import (
    CameraIntrinsics,
    DepthMap,
    NoiseModel,
    PlaneSpec,
    SceneKind,
    SceneSpec,
    SphereSpec,
)
from services.depth_sampling.synthetic import rendered_cloud

SMALL_W, SMALL_H = 160, 120


@pytest.fixture
def small_intrinsics() -> CameraIntrinsics:
    """160x120 camera whose principal point sits exactly on pixel (80, 60)."""
    return CameraIntrinsics(fx=130.0, fy=130.0, cx=80.0, cy=60.0)


@pytest.fixture
def vga_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics.nyu_kinect()


def plane_scene(
    intrinsics: CameraIntrinsics,
    tilt_deg: float = 0.0,
    distance: float = 1.0,
    width: int = SMALL_W,
    height: int = SMALL_H,
) -> SceneSpec:
    return SceneSpec(
        kind=SceneKind.PLANE,
        width=width,
        height=height,
        intrinsics=intrinsics,
        plane=PlaneSpec.tilted(tilt_deg, distance),
    )


def sphere_scene(intrinsics: CameraIntrinsics) -> SceneSpec:
    return SceneSpec(
        kind=SceneKind.SPHERE,
        width=SMALL_W,
        height=SMALL_H,
        intrinsics=intrinsics,
        sphere=SphereSpec(center=(0.0, 0.0, 2.0), radius=0.5),
    )


def corner_scene(intrinsics: CameraIntrinsics) -> SceneSpec:
    """Frontal wall at 2 m over a floor 0.5 m below the camera."""
    return SceneSpec(
        kind=SceneKind.CORNER,
        width=SMALL_W,
        height=SMALL_H,
        intrinsics=intrinsics,
        plane=PlaneSpec(normal=(0.0, 0.0, -1.0), offset=2.0),
        second_plane=PlaneSpec(normal=(0.0, -1.0, 0.0), offset=0.5),
    )


@pytest.fixture
def frontal_plane(small_intrinsics):
    return rendered_cloud(plane_scene(small_intrinsics))


@pytest.fixture
def tilted_plane(small_intrinsics):
    return rendered_cloud(plane_scene(small_intrinsics, tilt_deg=30.0))


@pytest.fixture
def all_scenes(small_intrinsics):
    return [
        rendered_cloud(plane_scene(small_intrinsics)),
        rendered_cloud(plane_scene(small_intrinsics, tilt_deg=30.0)),
        rendered_cloud(plane_scene(small_intrinsics, tilt_deg=60.0)),
        rendered_cloud(sphere_scene(small_intrinsics)),
        rendered_cloud(corner_scene(small_intrinsics)),
    ]


@pytest.fixture
def quiet_noise() -> NoiseModel:
    return NoiseModel(sigma0=0.0, angle_gain=0.0, seed=0)


def random_depth(rng: np.random.Generator, height: int = 12, width: int = 16) -> DepthMap:
    """Millimeter-quantized depths in [0.3, 10] m with roughly 10% holes."""
    values = rng.integers(300, 10001, size=(height, width)) / 1000.0
    valid = rng.random((height, width)) > 0.1
    return DepthMap(values=np.where(valid, values, 0.0), valid=valid)
