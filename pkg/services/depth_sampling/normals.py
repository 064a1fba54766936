"""PCA surface normals and curvature over organized point clouds."""

import time
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from services.common.logging import get_logger, log_performance

from .config import settings
from .exceptions import InvalidInputError
from .models import (
    MAX_CURVATURE,
    UNIT_TOLERANCE,
    EigenDecomposition3,
    NeighborhoodConfig,
    NormalMap,
    Point3,
    PointCloud,
)

logger = get_logger(__name__)

SYMMETRY_TOLERANCE = 1e-9
EIGEN_CLAMP = 1e-12
COLLINEAR_RATIO = 1e-6

PointsLike = Union[np.ndarray, Sequence[Point3]]


class NormalEstimate(NamedTuple):
    """Camera-oriented unit normal and curvature of one neighborhood."""

    normal: np.ndarray
    curvature: float


def _as_points(points: PointsLike) -> np.ndarray:
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=np.float64)
    else:
        arr = np.array([p.as_array() for p in points], dtype=np.float64)
    return arr.reshape(-1, 3)


def _as_vector(point: Union[Point3, np.ndarray]) -> np.ndarray:
    if isinstance(point, Point3):
        return point.as_array()
    return np.asarray(point, dtype=np.float64).reshape(3)


def gather_neighborhood(
    cloud: PointCloud, u: int, v: int, cfg: NeighborhoodConfig
) -> np.ndarray:
    """Valid window points within ``cfg.radius`` of the center, center included.

    Returns an N x 3 array; empty when the center pixel is invalid. Windows
    crossing the image border are truncated.
    """
    if not (0 <= u < cloud.width and 0 <= v < cloud.height):
        raise InvalidInputError(
            f"pixel ({u}, {v}) outside {cloud.width}x{cloud.height}"
        )
    if not cloud.valid[v, u]:
        return np.empty((0, 3), dtype=np.float64)

    half = cfg.window // 2
    v0, v1 = max(0, v - half), min(cloud.height, v + half + 1)
    u0, u1 = max(0, u - half), min(cloud.width, u + half + 1)
    pts = cloud.points[v0:v1, u0:u1].reshape(-1, 3)
    ok = cloud.valid[v0:v1, u0:u1].ravel()
    dist = np.linalg.norm(pts - cloud.points[v, u], axis=1)
    return pts[ok & (dist <= cfg.radius)]


def _masked_moments(
    windows: np.ndarray, mask: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Counts, centroids and 1/N covariances of masked point stacks (M x N x 3)."""
    counts = mask.sum(axis=1)
    weights = mask[..., np.newaxis].astype(np.float64)
    safe = np.maximum(counts, 1)[:, np.newaxis]
    means = (windows * weights).sum(axis=1) / safe
    centered = (windows - means[:, np.newaxis, :]) * weights
    covs = np.einsum("mni,mnj->mij", centered, centered) / safe[..., np.newaxis]
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    return counts, means, covs


def local_mean_and_covariance(points: PointsLike) -> Tuple[Point3, np.ndarray]:
    """Centroid and covariance C = 1/N sum (p - mu)(p - mu)^T."""
    pts = _as_points(points)
    if pts.shape[0] == 0:
        raise InvalidInputError("covariance of an empty neighborhood")
    _, means, covs = _masked_moments(pts[np.newaxis], np.ones((1, pts.shape[0]), bool))
    return Point3.from_array(means[0]), covs[0]


def _eigh_batch(covs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Ascending eigenpairs of stacked symmetric 3x3 matrices.

    Eigenvectors are columns. Each column is signed so that its
    largest-magnitude component (first one on ties) is positive, and
    eigenvalues in [-EIGEN_CLAMP, 0) are clamped to 0.
    """
    values, vectors = np.linalg.eigh(covs)
    values = np.where((values < 0) & (values >= -EIGEN_CLAMP), 0.0, values)
    lead = np.argmax(np.abs(vectors), axis=1)
    picked = np.take_along_axis(vectors, lead[:, np.newaxis, :], axis=1)[:, 0, :]
    signs = np.where(picked < 0, -1.0, 1.0)
    return values, vectors * signs[:, np.newaxis, :]


def eigen_symmetric3(matrix: np.ndarray) -> EigenDecomposition3:
    """Eigen-decomposition of a symmetric 3x3 matrix, eigenvalues ascending."""
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.shape != (3, 3) or not np.all(np.isfinite(mat)):
        raise InvalidInputError(f"expected a finite 3x3 matrix, got shape {mat.shape}")
    if np.max(np.abs(mat - mat.T)) > SYMMETRY_TOLERANCE:
        raise InvalidInputError("matrix is not symmetric")
    values, vectors = _eigh_batch(0.5 * (mat + mat.T)[np.newaxis])
    return EigenDecomposition3(eigenvalues=values[0], eigenvectors=vectors[0])


def _orient_batch(normals: np.ndarray, centers: np.ndarray) -> np.ndarray:
    dots = np.einsum("mi,mi->m", normals, centers)
    at_origin = ~np.any(centers != 0, axis=1)
    flip = (dots >= 0) & ~at_origin
    return np.where(flip[:, np.newaxis], -normals, normals)


def _finish_normals(
    values: np.ndarray,
    vectors: np.ndarray,
    counts: np.ndarray,
    centers: np.ndarray,
    min_points: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least-variance normals, curvature and validity from eigenpairs."""
    lam = values.copy()
    lam[:, 0] = np.maximum(lam[:, 0], 0.0)
    trace = lam.sum(axis=1)
    valid = (
        (counts >= min_points)
        & (trace > 0)
        & (lam[:, 1] >= COLLINEAR_RATIO * lam[:, 2])
    )
    safe_trace = np.where(valid, trace, 1.0)
    curvature = np.where(valid, np.minimum(lam[:, 0] / safe_trace, MAX_CURVATURE), 0.0)
    normals = _orient_batch(vectors[:, :, 0], centers)
    normals = np.where(valid[:, np.newaxis], normals, 0.0)
    return normals, curvature, valid


def orient_to_camera(
    normal: np.ndarray, point: Union[Point3, np.ndarray]
) -> np.ndarray:
    """Flip ``normal`` unless n^T p < 0, so that it faces the camera at the origin."""
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    if abs(float(np.linalg.norm(n)) - 1.0) > UNIT_TOLERANCE:
        raise InvalidInputError("normal must be unit length")
    p = _as_vector(point)
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("point must be finite")
    if not np.any(p != 0):
        logger.debug("Degenerate orientation at camera center")
        return n
    return _orient_batch(n[np.newaxis], p[np.newaxis])[0]


def estimate_normal(
    points: PointsLike,
    center: Union[Point3, np.ndarray],
    min_points: Optional[int] = None,
) -> Optional[NormalEstimate]:
    """PCA normal (least-variance eigenvector) and curvature, or None if invalid.

    A neighborhood is invalid below ``min_points`` points, with zero total
    variance, or when it is collinear (lambda2 / lambda3 < 1e-6).
    """
    if min_points is None:
        min_points = settings.min_points
    pts = _as_points(points)
    if pts.shape[0] == 0 or pts.shape[0] < min_points:
        return None
    _, cov = local_mean_and_covariance(pts)
    eig = eigen_symmetric3(cov)
    normals, curvature, valid = _finish_normals(
        eig.eigenvalues[np.newaxis],
        eig.eigenvectors[np.newaxis],
        np.array([pts.shape[0]]),
        _as_vector(center)[np.newaxis],
        min_points,
    )
    if not valid[0]:
        return None
    return NormalEstimate(normal=normals[0], curvature=float(curvature[0]))


def estimate_normal_map(
    cloud: PointCloud,
    cfg: NeighborhoodConfig,
    chunk_rows: Optional[int] = None,
) -> NormalMap:
    """Per-pixel gather, covariance, eigen-decomposition and orientation.

    Rows are processed in batches of sliding windows; each pixel gets the
    same neighborhood ``gather_neighborhood`` would return.
    """
    start_time = time.time()
    rows = chunk_rows or settings.chunk_rows
    height, width = cloud.shape
    half = cfg.window // 2
    k = cfg.window

    padded_pts = np.pad(cloud.points, ((half, half), (half, half), (0, 0)))
    padded_valid = np.pad(cloud.valid, half, constant_values=False)

    normals = np.zeros((height, width, 3))
    curvature = np.zeros((height, width))
    valid = np.zeros((height, width), dtype=bool)

    for row0 in range(0, height, rows):
        row1 = min(height, row0 + rows)
        block_valid = cloud.valid[row0:row1]
        if not block_valid.any():
            continue
        win_pts = sliding_window_view(
            padded_pts[row0 : row1 + 2 * half], (k, k), axis=(0, 1)
        )
        win_valid = sliding_window_view(
            padded_valid[row0 : row1 + 2 * half], (k, k), axis=(0, 1)
        )
        count = (row1 - row0) * width
        stacks = np.moveaxis(win_pts, 2, -1).reshape(count, k * k, 3)
        stack_valid = win_valid.reshape(count, k * k)
        centers = cloud.points[row0:row1].reshape(count, 3)

        dist = np.linalg.norm(stacks - centers[:, np.newaxis, :], axis=2)
        mask = stack_valid & (dist <= cfg.radius) & block_valid.reshape(count, 1)

        counts, _, covs = _masked_moments(stacks, mask)
        values, vectors = _eigh_batch(covs)
        n, kappa, ok = _finish_normals(values, vectors, counts, centers, cfg.min_points)

        normals[row0:row1] = n.reshape(row1 - row0, width, 3)
        curvature[row0:row1] = kappa.reshape(row1 - row0, width)
        valid[row0:row1] = ok.reshape(row1 - row0, width)

    log_performance(
        logger,
        "estimate_normal_map",
        time.time() - start_time,
        pixels=height * width,
        valid_points=int(cloud.valid.sum()),
        valid_normals=int(valid.sum()),
        window=cfg.window,
        radius=cfg.radius,
    )
    return NormalMap(normals=normals, curvature=curvature, valid=valid)


def angular_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle in degrees between stacked unit vectors."""
    dots = np.einsum("...i,...i->...", a, b)
    return np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))


def normal_map_to_rgb(normal_map: NormalMap) -> np.ndarray:
    """Inspection image: each channel is (n + 1) / 2 scaled to 0..255."""
    rgb = np.floor((normal_map.normals + 1.0) * 0.5 * 255.0 + 0.5)
    rgb[~normal_map.valid] = 0
    return np.clip(rgb, 0, 255).astype(np.uint8)


def curvature_to_gray(normal_map: NormalMap) -> np.ndarray:
    """Curvature in [0, 1/3] mapped linearly to 0..255; invalid pixels are 0."""
    gray = np.floor(normal_map.curvature / MAX_CURVATURE * 255.0 + 0.5)
    gray[~normal_map.valid] = 0
    return np.clip(gray, 0, 255).astype(np.uint8)
