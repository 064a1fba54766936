"""Reliability-proportional and uniform sparse depth sampling."""

import time
from typing import Optional

import numpy as np

from services.common.logging import get_logger, log_performance

from .exceptions import InfeasibleSampleError, InvalidInputError, InvalidSampleError
from .geometry import backproject_map
from .models import (
    CameraIntrinsics,
    DepthMap,
    NeighborhoodConfig,
    ProbabilityVector,
    ReliabilityConfig,
    ReliabilityMap,
    SampleSet,
    SamplerConfig,
    SamplingResult,
    SamplingStrategy,
    SparseDepthMap,
)
from .normals import estimate_normal_map
from .reliability import reliability_map, to_probabilities

logger = get_logger(__name__)


def keyed_uniforms(seed: int, indices: np.ndarray) -> np.ndarray:
    """Uniforms in (0, 1] keyed by (seed, pixel index).

    The value for index i is the i-th output of a Philox stream keyed by
    ``seed``, so it does not depend on which other indices are requested.
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        return np.empty(0)
    generator = np.random.Generator(np.random.Philox(key=int(seed)))
    stream = generator.random(int(idx.max()) + 1)
    return 1.0 - stream[idx]


def _top_k(indices: np.ndarray, keys: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest keys, ties broken by lower index; sorted output."""
    order = np.lexsort((indices, -keys))
    return np.sort(indices[order[:k]])


def sample_without_replacement(pv: ProbabilityVector, k: int, seed: int) -> np.ndarray:
    """Draw k distinct indices with sequential weighted-draw semantics.

    Exponential keys: key_i = u_i ** (1 / w_i), the k largest win. Compared in
    log space, log(u_i) / w_i, which preserves the order.
    """
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    support = pv.probs > 0
    available = int(support.sum())
    if k > available:
        raise InfeasibleSampleError(k, available)
    indices = pv.indices[support]
    weights = pv.probs[support]
    keys = np.log(keyed_uniforms(seed, indices)) / weights
    return _top_k(indices, keys, k)


def sample_uniform(eligible: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Uniform k-subset of ``eligible`` without replacement."""
    idx = np.asarray(eligible, dtype=np.int64)
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    if np.unique(idx).size != idx.size:
        raise InvalidInputError("eligible indices must be distinct")
    if k > idx.size:
        raise InfeasibleSampleError(k, int(idx.size))
    return _top_k(idx, keyed_uniforms(seed, idx), k)


def build_sparse_depth(src: DepthMap, samples: SampleSet) -> SparseDepthMap:
    """Source depth at sampled pixels, 0 elsewhere."""
    if (samples.height, samples.width) != src.shape:
        raise InvalidInputError("sample set and depth map shapes differ")
    flat_valid = src.valid.ravel()
    if not np.all(flat_valid[samples.indices]):
        raise InvalidSampleError("sample index points at an invalid source pixel")
    values = np.zeros(src.values.size)
    values[samples.indices] = src.values.ravel()[samples.indices]
    return SparseDepthMap(values=values.reshape(src.shape))


def geometry_reliability(
    depth: DepthMap,
    intrinsics: CameraIntrinsics,
    ncfg: NeighborhoodConfig,
    rcfg: ReliabilityConfig,
) -> ReliabilityMap:
    """Back-projection, normal estimation and reliability scoring of a frame."""
    cloud = backproject_map(depth, intrinsics)
    normals = estimate_normal_map(cloud, ncfg)
    return reliability_map(normals, cloud, rcfg)


def sample_frame(
    depth: DepthMap,
    intrinsics: CameraIntrinsics,
    ncfg: NeighborhoodConfig,
    rcfg: ReliabilityConfig,
    scfg: SamplerConfig,
    reliability: Optional[ReliabilityMap] = None,
) -> SamplingResult:
    """Sample one frame with the configured strategy.

    ``reliability`` may be passed in to reuse a map computed for the same
    frame and configs (the comparison harness does this across seeds).
    """
    start_time = time.time()
    fallback = False

    if scfg.strategy == SamplingStrategy.UNIFORM:
        eligible = np.flatnonzero(depth.valid.ravel())
        indices = sample_uniform(eligible, scfg.k, scfg.seed)
        eligible_count = int(eligible.size)
        rel = None
    else:
        rel = reliability
        if rel is None:
            rel = geometry_reliability(depth, intrinsics, ncfg, rcfg)
        if rel.shape != depth.shape:
            raise InvalidInputError("reliability map and depth map shapes differ")
        if rel.valid.any():
            pv = to_probabilities(rel)
            fallback = pv.uniform_fallback
            indices = sample_without_replacement(pv, scfg.k, scfg.seed)
            eligible_count = int(pv.indices.size)
        else:
            # no pixel has a usable normal, e.g. far depth with a small radius
            logger.warning(
                "No valid normals, using uniform fallback",
                valid_pixels=depth.valid_count,
            )
            fallback = True
            eligible = np.flatnonzero(depth.valid.ravel())
            indices = sample_uniform(eligible, scfg.k, scfg.seed)
            eligible_count = int(eligible.size)

    samples = SampleSet.from_depth(depth, indices)
    sparse = build_sparse_depth(depth, samples)

    log_performance(
        logger,
        "sample_frame",
        time.time() - start_time,
        strategy=scfg.strategy.value,
        k=scfg.k,
        seed=scfg.seed,
        valid_pixels=depth.valid_count,
        eligible_pixels=eligible_count,
        uniform_fallback=fallback,
    )
    return SamplingResult(
        sparse=sparse,
        samples=samples,
        strategy=scfg.strategy,
        reliability=rel,
        uniform_fallback=fallback,
    )
