"""Pinhole back-projection from depth maps to organized point clouds."""

import math
from typing import Tuple

import numpy as np

from .exceptions import InvalidInputError
from .models import CameraIntrinsics, DepthMap, Point3, PointCloud


def backproject_pixel(
    u: float, v: float, depth: float, intrinsics: CameraIntrinsics
) -> Point3:
    """Back-project pixel (u, v) at ``depth`` meters: D(u,v) * K^-1 (u, v, 1)^T."""
    if not math.isfinite(depth) or depth <= 0:
        raise InvalidInputError(f"depth must be positive and finite, got {depth}")
    intrinsics.check_focals()
    return Point3(
        x=depth * ((u - intrinsics.cx) / intrinsics.fx),
        y=depth * ((v - intrinsics.cy) / intrinsics.fy),
        z=depth,
    )


def project_point(point: Point3, intrinsics: CameraIntrinsics) -> Tuple[float, float]:
    """Project a camera-frame point back to pixel coordinates."""
    if point.z <= 0:
        raise InvalidInputError(f"point must lie in front of the camera, z={point.z}")
    return (
        intrinsics.fx * point.x / point.z + intrinsics.cx,
        intrinsics.fy * point.y / point.z + intrinsics.cy,
    )


def pixel_rays(
    height: int, width: int, intrinsics: CameraIntrinsics
) -> np.ndarray:
    """Unnormalized rays K^-1 (u, v, 1)^T for every pixel, shape H x W x 3."""
    intrinsics.check_focals()
    us = (np.arange(width, dtype=np.float64) - intrinsics.cx) / intrinsics.fx
    vs = (np.arange(height, dtype=np.float64) - intrinsics.cy) / intrinsics.fy
    rays = np.empty((height, width, 3), dtype=np.float64)
    rays[..., 0] = us[np.newaxis, :]
    rays[..., 1] = vs[:, np.newaxis]
    rays[..., 2] = 1.0
    return rays


def backproject_map(depth: DepthMap, intrinsics: CameraIntrinsics) -> PointCloud:
    """Back-project every valid pixel; invalid pixels become zero points."""
    intrinsics.check_image(depth.width, depth.height)
    rays = pixel_rays(depth.height, depth.width, intrinsics)
    points = rays * depth.values[..., np.newaxis]
    points[~depth.valid] = 0.0
    return PointCloud(points=points, valid=depth.valid.copy())
