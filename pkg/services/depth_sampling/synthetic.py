"""Analytic scenes with exact depth and normals, plus a sensor noise model."""

import time
from typing import Tuple

import numpy as np

from services.common.logging import get_logger, log_performance

from .exceptions import InvalidInputError
from .geometry import backproject_map, pixel_rays
from .models import (
    DepthMap,
    NoiseModel,
    NormalMap,
    PlaneSpec,
    PointCloud,
    SceneKind,
    SceneSpec,
    SphereSpec,
)

logger = get_logger(__name__)

NOISE_CAP = 100.0


def _plane_hits(rays: np.ndarray, plane: PlaneSpec) -> Tuple[np.ndarray, np.ndarray]:
    """z-depth along each ray to the plane n.p + offset = 0, and its normal."""
    normal = np.asarray(plane.normal)
    denom = rays @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = np.where(denom != 0, -plane.offset / denom, np.inf)
    depth = np.where(np.isfinite(depth) & (depth > 0), depth, np.inf)
    normals = np.broadcast_to(normal, rays.shape).copy()
    return depth, normals


def _sphere_hits(
    rays: np.ndarray, sphere: SphereSpec
) -> Tuple[np.ndarray, np.ndarray]:
    """z-depth of the first intersection with the sphere, and the outward normal."""
    center = np.asarray(sphere.center)
    a = np.einsum("hwi,hwi->hw", rays, rays)
    b = rays @ center
    c = float(center @ center) - sphere.radius**2
    disc = b * b - a * c
    with np.errstate(invalid="ignore"):
        depth = (b - np.sqrt(disc)) / a
    depth = np.where((disc >= 0) & (depth > 0), depth, np.inf)
    points = rays * np.where(np.isfinite(depth), depth, 0.0)[..., np.newaxis]
    normals = (points - center) / sphere.radius
    return depth, normals


def _orient(normals: np.ndarray, points: np.ndarray) -> np.ndarray:
    dots = np.einsum("hwi,hwi->hw", normals, points)
    return np.where((dots >= 0)[..., np.newaxis], -normals, normals)


def render_scene(spec: SceneSpec) -> Tuple[DepthMap, NormalMap]:
    """Ray-cast the scene: exact z-depth and camera-oriented analytic normals.

    Pixels whose ray misses every surface are invalid. A corner keeps the
    first hit of its two planes.
    """
    start_time = time.time()
    spec.intrinsics.check_image(spec.width, spec.height)
    rays = pixel_rays(spec.height, spec.width, spec.intrinsics)

    if spec.kind == SceneKind.PLANE:
        assert spec.plane is not None
        depth, normals = _plane_hits(rays, spec.plane)
    elif spec.kind == SceneKind.SPHERE:
        assert spec.sphere is not None
        depth, normals = _sphere_hits(rays, spec.sphere)
    else:
        assert spec.plane is not None and spec.second_plane is not None
        depth_a, normals_a = _plane_hits(rays, spec.plane)
        depth_b, normals_b = _plane_hits(rays, spec.second_plane)
        first = depth_a <= depth_b
        depth = np.where(first, depth_a, depth_b)
        normals = np.where(first[..., np.newaxis], normals_a, normals_b)

    valid = np.isfinite(depth)
    if not valid.any():
        raise InvalidInputError(
            f"{spec.kind.value} scene is not visible from the camera"
        )

    values = np.where(valid, depth, 0.0)
    points = rays * values[..., np.newaxis]
    normals = _orient(normals, points)
    normals = np.where(valid[..., np.newaxis], normals, 0.0)

    log_performance(
        logger,
        "render_scene",
        time.time() - start_time,
        kind=spec.kind.value,
        valid_pixels=int(valid.sum()),
    )
    return (
        DepthMap(values=values, valid=valid),
        NormalMap(normals=normals, curvature=np.zeros(valid.shape), valid=valid),
    )


def rendered_cloud(spec: SceneSpec) -> Tuple[DepthMap, NormalMap, PointCloud]:
    """Render a scene and back-project its depth."""
    depth, normals = render_scene(spec)
    return depth, normals, backproject_map(depth, spec.intrinsics)


def incidence_angles(gt_normals: NormalMap, cloud: PointCloud) -> np.ndarray:
    """Incidence angle (radians) per pixel; 0 where no normal is known."""
    norms = np.linalg.norm(cloud.points, axis=-1)
    known = gt_normals.valid & cloud.valid & (norms > 0)
    safe = np.where(known, norms, 1.0)[..., np.newaxis]
    view = cloud.points / safe
    cos_theta = np.abs(np.einsum("hwi,hwi->hw", gt_normals.normals, view))
    cos_theta = np.where(known, np.clip(cos_theta, 0.0, 1.0), 1.0)
    return np.arccos(cos_theta)


def noise_sigma(theta: np.ndarray, nm: NoiseModel) -> np.ndarray:
    """sigma0 * (1 + angle_gain * tan^2 theta), capped at 100 * sigma0."""
    if nm.angle_gain == 0:
        return np.full(theta.shape, nm.sigma0)
    cos2 = np.cos(theta) ** 2
    with np.errstate(divide="ignore"):
        tan2 = np.where(cos2 > 0, (1.0 - cos2) / cos2, np.inf)
    return nm.sigma0 * np.minimum(1.0 + nm.angle_gain * tan2, NOISE_CAP)


def apply_noise(
    depth: DepthMap, gt_normals: NormalMap, cloud: PointCloud, nm: NoiseModel
) -> Tuple[DepthMap, np.ndarray]:
    """Incidence-dependent Gaussian depth noise with grazing dropout.

    Returns the noisy map and |noisy - clean| in meters (0 on invalid
    output pixels). Pixels beyond ``dropout_angle`` and pixels pushed to
    non-positive depth are invalidated.
    """
    if not (depth.shape == gt_normals.shape == cloud.shape):
        raise InvalidInputError("depth, normals and cloud shapes differ")

    theta = incidence_angles(gt_normals, cloud)
    sigma = noise_sigma(theta, nm)
    generator = np.random.Generator(np.random.Philox(key=nm.seed))
    gauss = generator.standard_normal(depth.values.size).reshape(depth.shape)

    noisy = depth.values + sigma * gauss
    keep = depth.valid & (theta <= nm.dropout_angle) & (noisy > 0)
    values = np.where(keep, noisy, 0.0)
    error = np.where(keep, np.abs(values - depth.values), 0.0)

    logger.info(
        "Noise applied",
        sigma0=nm.sigma0,
        angle_gain=nm.angle_gain,
        dropped=int(depth.valid.sum() - keep.sum()),
        mean_abs_error=float(error[keep].mean()) if keep.any() else 0.0,
    )
    return DepthMap(values=values, valid=keep), error
