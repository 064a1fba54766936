"""Incidence-angle reliability scores and sampling probabilities."""

import math
import time

import numpy as np

from services.common.logging import get_logger, log_performance

from .exceptions import InvalidInputError
from .models import (
    UNIT_TOLERANCE,
    NormalMap,
    Point3,
    PointCloud,
    ProbabilityVector,
    ReliabilityConfig,
    ReliabilityMap,
)

logger = get_logger(__name__)


def viewing_direction(point: Point3) -> np.ndarray:
    """Unit ray from the camera center to ``point``."""
    p = point.as_array()
    norm = float(np.linalg.norm(p))
    if norm == 0:
        raise InvalidInputError("viewing direction of the camera center is undefined")
    return p / norm


def incidence_cosine(normal: np.ndarray, view: np.ndarray) -> float:
    """|n^T v| clamped to [0, 1]."""
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    v = np.asarray(view, dtype=np.float64).reshape(3)
    for name, vec in (("normal", n), ("view", v)):
        if abs(float(np.linalg.norm(vec)) - 1.0) > UNIT_TOLERANCE:
            raise InvalidInputError(f"{name} must be unit length")
    return float(np.clip(abs(float(n @ v)), 0.0, 1.0))


def angle_score(cos_theta: float, beta: float) -> float:
    """cos(theta) ** beta."""
    if not 0.0 <= cos_theta <= 1.0:
        raise InvalidInputError(f"cos_theta must lie in [0, 1], got {cos_theta}")
    if beta < 1.0:
        raise InvalidInputError(f"beta must be >= 1, got {beta}")
    return float(cos_theta**beta)


def reliability_map(
    normals: NormalMap, cloud: PointCloud, cfg: ReliabilityConfig
) -> ReliabilityMap:
    """r = |n^T v|^beta on pixels valid in both inputs, 0 elsewhere.

    With ``cfg.curvature_gate`` the score is further multiplied by
    max(0, 1 - kappa / kappa_max).
    """
    if normals.shape != cloud.shape:
        raise InvalidInputError(
            f"normal map {normals.shape} and cloud {cloud.shape} differ in shape"
        )
    start_time = time.time()
    valid = normals.valid & cloud.valid
    points = cloud.points
    norms = np.linalg.norm(points, axis=-1)
    valid &= norms > 0
    safe = np.where(valid, norms, 1.0)[..., np.newaxis]
    cos_theta = np.abs(np.einsum("hwi,hwi->hw", normals.normals, points / safe))
    scores = np.clip(cos_theta, 0.0, 1.0) ** cfg.beta
    if cfg.curvature_gate:
        scores = scores * np.maximum(0.0, 1.0 - normals.curvature / cfg.kappa_max)
    scores = np.where(valid, scores, 0.0)

    log_performance(
        logger,
        "reliability_map",
        time.time() - start_time,
        valid_pixels=int(valid.sum()),
        mean_score=float(scores[valid].mean()) if valid.any() else 0.0,
        beta=cfg.beta,
        curvature_gate=cfg.curvature_gate,
    )
    return ReliabilityMap(scores=scores, valid=valid)


def to_probabilities(rel: ReliabilityMap) -> ProbabilityVector:
    """p_i = r_i / sum r over valid pixels with r > 0.

    Falls back to uniform over the valid pixels when the total reliability
    is zero. Sums use compensated summation.
    """
    flat_valid = rel.valid.ravel()
    if not flat_valid.any():
        raise InvalidInputError("reliability map has no valid pixels")
    flat_scores = rel.scores.ravel()
    positive = np.flatnonzero(flat_valid & (flat_scores > 0))
    total = math.fsum(flat_scores[positive].tolist())

    if positive.size == 0 or total <= 0:
        indices = np.flatnonzero(flat_valid)
        logger.warning(
            "Zero total reliability, using uniform fallback", pixels=int(indices.size)
        )
        probs = np.full(indices.size, 1.0 / indices.size)
        return ProbabilityVector(
            indices=indices.astype(np.int64), probs=probs, uniform_fallback=True
        )

    probs = flat_scores[positive] / total
    return ProbabilityVector(indices=positive.astype(np.int64), probs=probs)
