"""Pydantic models for the depth sampling service."""

import math
from enum import Enum
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import settings
from .exceptions import InvalidInputError, InvalidSampleError

UNIT_TOLERANCE = 1e-6
MAX_CURVATURE = 1.0 / 3.0


class ArrayModel(BaseModel):
    """Base for models holding numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


def _finite(value: float, name: str) -> float:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


class CameraIntrinsics(BaseModel):
    """Pinhole intrinsics (pixels).

    Construction accepts any finite numbers; positivity of the focal
    lengths and principal-point bounds are checked when the intrinsics are
    paired with an image.
    """

    fx: float
    fy: float
    cx: float
    cy: float

    @field_validator("fx", "fy", "cx", "cy")
    @classmethod
    def _check_finite(cls, value: float) -> float:
        return _finite(value, "intrinsic")

    @classmethod
    def nyu_kinect(cls) -> "CameraIntrinsics":
        """Standard NYU Depth v2 Kinect calibration (640x480)."""
        return cls(fx=518.8579, fy=519.4696, cx=325.5824, cy=253.7362)

    def check_focals(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError(
                f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}"
            )

    def check_image(self, width: int, height: int) -> None:
        """Validate these intrinsics against an image of the given size."""
        self.check_focals()
        if not (0 <= self.cx < width and 0 <= self.cy < height):
            raise InvalidInputError(
                f"principal point ({self.cx}, {self.cy}) outside {width}x{height} image"
            )

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for the image resized by ``factor``."""
        return CameraIntrinsics(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
        )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


class Point3(BaseModel):
    """Camera-frame point in meters."""

    x: float
    y: float
    z: float

    @field_validator("x", "y", "z")
    @classmethod
    def _check_finite(cls, value: float) -> float:
        return _finite(value, "coordinate")

    @classmethod
    def from_array(cls, values: np.ndarray) -> "Point3":
        x, y, z = (float(c) for c in np.asarray(values, dtype=np.float64))
        return cls(x=x, y=y, z=z)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


class DepthMap(ArrayModel):
    """H x W metric depth with explicit validity; invalid pixels hold 0."""

    values: np.ndarray
    valid: np.ndarray

    @field_validator("values")
    @classmethod
    def _as_float(cls, value: np.ndarray) -> np.ndarray:
        return np.asarray(value, dtype=np.float64)

    @field_validator("valid")
    @classmethod
    def _as_bool(cls, value: np.ndarray) -> np.ndarray:
        return np.asarray(value, dtype=bool)

    @model_validator(mode="after")
    def _check(self) -> "DepthMap":
        if self.values.ndim != 2 or self.values.shape != self.valid.shape:
            raise ValueError(
                f"depth {self.values.shape} and mask {self.valid.shape} "
                "must be equal 2-D shapes"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("depth values must be finite")
        if np.any(self.values[self.valid] <= 0):
            raise ValueError("valid pixels must carry positive depth")
        if np.any(self.values[~self.valid] != 0):
            raise ValueError("invalid pixels must carry depth 0")
        return self

    @classmethod
    def from_array(cls, values: np.ndarray) -> "DepthMap":
        """Mark non-finite and non-positive entries invalid and zero them."""
        raw = np.asarray(values, dtype=np.float64)
        valid = np.isfinite(raw) & (raw > 0)
        return cls(values=np.where(valid, raw, 0.0), valid=valid)

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))


class PointCloud(ArrayModel):
    """Organized H x W cloud of camera-frame points."""

    points: np.ndarray
    valid: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "PointCloud":
        if self.points.ndim != 3 or self.points.shape[2] != 3:
            raise ValueError(f"points must be H x W x 3, got {self.points.shape}")
        if self.points.shape[:2] != self.valid.shape:
            raise ValueError("points and mask shapes differ")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")
        if np.any(self.points[..., 2][self.valid] <= 0):
            raise ValueError("valid points must have z > 0")
        return self

    @property
    def height(self) -> int:
        return int(self.valid.shape[0])

    @property
    def width(self) -> int:
        return int(self.valid.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


class NeighborhoodConfig(BaseModel):
    """Pixel window intersected with a 3D radius."""

    window: int = Field(default_factory=lambda: settings.window, ge=3)
    radius: float = Field(default_factory=lambda: settings.radius, gt=0)
    min_points: int = Field(default_factory=lambda: settings.min_points, ge=3)

    @field_validator("window")
    @classmethod
    def _odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"window must be odd, got {value}")
        return value


class EigenDecomposition3(ArrayModel):
    """Ascending eigenvalues with eigenvectors stored as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "EigenDecomposition3":
        if self.eigenvalues.shape != (3,) or self.eigenvectors.shape != (3, 3):
            raise ValueError("expected 3 eigenvalues and a 3x3 eigenvector matrix")
        if np.any(np.diff(self.eigenvalues) < 0):
            raise ValueError("eigenvalues must be ascending")
        return self

    def vector(self, k: int) -> np.ndarray:
        return self.eigenvectors[:, k]


class NormalMap(ArrayModel):
    """Per-pixel unit normals, curvature and validity."""

    normals: np.ndarray
    curvature: np.ndarray
    valid: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "NormalMap":
        if self.normals.shape != self.valid.shape + (3,):
            raise ValueError("normals must be H x W x 3 matching the mask")
        if self.curvature.shape != self.valid.shape:
            raise ValueError("curvature must match the mask")
        norms = np.linalg.norm(self.normals[self.valid], axis=-1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
            raise ValueError("valid normals must be unit length")
        kappa = self.curvature[self.valid]
        if np.any(kappa < 0) or np.any(kappa > MAX_CURVATURE + 1e-12):
            raise ValueError("curvature must lie in [0, 1/3]")
        return self

    @classmethod
    def empty(cls, height: int, width: int) -> "NormalMap":
        return cls(
            normals=np.zeros((height, width, 3)),
            curvature=np.zeros((height, width)),
            valid=np.zeros((height, width), dtype=bool),
        )

    @property
    def height(self) -> int:
        return int(self.valid.shape[0])

    @property
    def width(self) -> int:
        return int(self.valid.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


class ReliabilityConfig(BaseModel):
    """Grazing-angle exponent and the optional curvature gate."""

    beta: float = Field(default_factory=lambda: settings.beta, ge=1.0)
    curvature_gate: bool = Field(default_factory=lambda: settings.curvature_gate)
    kappa_max: float = Field(default_factory=lambda: settings.kappa_max, gt=0)


class ReliabilityMap(ArrayModel):
    """Per-pixel reliability r in [0, 1]; invalid pixels carry 0."""

    scores: np.ndarray
    valid: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "ReliabilityMap":
        if self.scores.shape != self.valid.shape or self.scores.ndim != 2:
            raise ValueError("scores and mask must be equal 2-D shapes")
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise ValueError("reliability must lie in [0, 1]")
        if np.any(self.scores[~self.valid] != 0):
            raise ValueError("invalid pixels must carry reliability 0")
        return self

    @property
    def height(self) -> int:
        return int(self.valid.shape[0])

    @property
    def width(self) -> int:
        return int(self.valid.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


class ProbabilityVector(ArrayModel):
    """Sampling probabilities over linear pixel indices."""

    indices: np.ndarray
    probs: np.ndarray
    uniform_fallback: bool = False

    @model_validator(mode="after")
    def _check(self) -> "ProbabilityVector":
        if self.indices.shape != self.probs.shape or self.indices.ndim != 1:
            raise ValueError("indices and probs must be matching 1-D arrays")
        if self.indices.size == 0:
            raise ValueError("probability vector is empty")
        if np.unique(self.indices).size != self.indices.size:
            raise ValueError("indices must be distinct")
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(math.fsum(self.probs.tolist()) - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")
        return self


class SamplingStrategy(str, Enum):
    """Sparse depth selection strategies."""

    GEOMETRY_AWARE = "geometry_aware"
    UNIFORM = "uniform"


class SamplerConfig(BaseModel):
    """Sample count, seed and strategy."""

    k: int = Field(ge=1)
    seed: int = Field(ge=0, lt=2**64)
    strategy: SamplingStrategy = SamplingStrategy.GEOMETRY_AWARE


class SampleSet(ArrayModel):
    """K distinct sampled pixels with their source depths."""

    indices: np.ndarray
    depths: np.ndarray
    width: int = Field(ge=1)
    height: int = Field(ge=1)

    @model_validator(mode="after")
    def _check(self) -> "SampleSet":
        if self.indices.shape != self.depths.shape or self.indices.ndim != 1:
            raise ValueError("indices and depths must be matching 1-D arrays")
        if np.unique(self.indices).size != self.indices.size:
            raise ValueError("sample indices must be distinct")
        if self.indices.size and (
            self.indices.min() < 0 or self.indices.max() >= self.width * self.height
        ):
            raise ValueError("sample index outside the image")
        return self

    @classmethod
    def from_depth(cls, depth: DepthMap, indices: np.ndarray) -> "SampleSet":
        """Attach source depths, rejecting indices on invalid pixels."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= depth.values.size):
            raise InvalidSampleError("sample index outside the depth map")
        flat_valid = depth.valid.ravel()
        bad = idx[~flat_valid[idx]]
        if bad.size:
            raise InvalidSampleError(
                f"{bad.size} sample(s) on invalid pixels, first index {int(bad[0])}"
            )
        return cls(
            indices=idx,
            depths=depth.values.ravel()[idx],
            width=depth.width,
            height=depth.height,
        )

    @property
    def k(self) -> int:
        return int(self.indices.size)

    @property
    def us(self) -> np.ndarray:
        return self.indices % self.width

    @property
    def vs(self) -> np.ndarray:
        return self.indices // self.width


class SparseDepthMap(ArrayModel):
    """Depth at sampled pixels, 0 elsewhere."""

    values: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "SparseDepthMap":
        if self.values.ndim != 2:
            raise ValueError("sparse depth must be 2-D")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("sparse depth must be finite and nonnegative")
        return self

    @property
    def k(self) -> int:
        return int(np.count_nonzero(self.values))

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.values.shape[0]), int(self.values.shape[1]))

    def to_depth_map(self) -> DepthMap:
        return DepthMap(values=self.values, valid=self.values > 0)


class SamplingResult(ArrayModel):
    """Output of one frame sampling run."""

    sparse: SparseDepthMap
    samples: SampleSet
    strategy: SamplingStrategy
    reliability: Optional[ReliabilityMap] = None
    uniform_fallback: bool = False


class SceneKind(str, Enum):
    """Analytic scene types."""

    PLANE = "plane"
    SPHERE = "sphere"
    CORNER = "corner"


class PlaneSpec(BaseModel):
    """Plane {p : n.p + offset = 0}; offset > 0 when n faces the camera."""

    normal: Tuple[float, float, float]
    offset: float

    @field_validator("normal")
    @classmethod
    def _unit(cls, value: Tuple[float, float, float]) -> Tuple[float, float, float]:
        vec = np.asarray(value, dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if not math.isfinite(norm) or norm == 0:
            raise ValueError("plane normal must be finite and nonzero")
        x, y, z = (float(c) for c in vec / norm)
        return (x, y, z)

    @field_validator("offset")
    @classmethod
    def _check_offset(cls, value: float) -> float:
        return _finite(value, "offset")

    @classmethod
    def tilted(cls, tilt_deg: float, distance: float) -> "PlaneSpec":
        """Plane through (0, 0, distance) tilted about the x axis."""
        alpha = math.radians(tilt_deg)
        normal = (0.0, math.sin(alpha), -math.cos(alpha))
        return cls(normal=normal, offset=distance * math.cos(alpha))


class SphereSpec(BaseModel):
    """Sphere fully in front of the camera."""

    center: Tuple[float, float, float]
    radius: float = Field(gt=0)

    @model_validator(mode="after")
    def _in_front(self) -> "SphereSpec":
        if not all(math.isfinite(c) for c in self.center):
            raise ValueError("sphere center must be finite")
        if self.center[2] - self.radius <= 0:
            raise ValueError("sphere must lie in front of the camera")
        return self


class SceneSpec(BaseModel):
    """Analytic test scene."""

    kind: SceneKind
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    intrinsics: CameraIntrinsics
    plane: Optional[PlaneSpec] = None
    second_plane: Optional[PlaneSpec] = None
    sphere: Optional[SphereSpec] = None

    @model_validator(mode="after")
    def _check_kind(self) -> "SceneSpec":
        if self.kind == SceneKind.PLANE and self.plane is None:
            raise ValueError("plane scene needs a plane")
        if self.kind == SceneKind.SPHERE and self.sphere is None:
            raise ValueError("sphere scene needs a sphere")
        if self.kind == SceneKind.CORNER and (
            self.plane is None or self.second_plane is None
        ):
            raise ValueError("corner scene needs two planes")
        return self


class NoiseModel(BaseModel):
    """Incidence-dependent Gaussian depth noise with grazing dropout."""

    sigma0: float = Field(ge=0)  # meters
    angle_gain: float = Field(ge=0)
    dropout_angle: float = Field(default=math.pi / 2, gt=0, le=math.pi / 2)
    seed: int = Field(ge=0, lt=2**64)


class CompletionMethod(str, Enum):
    """Completion oracles."""

    IDW = "idw"


class CompletionConfig(BaseModel):
    """Inverse-distance-weighting parameters."""

    method: CompletionMethod = CompletionMethod.IDW
    power: float = Field(default_factory=lambda: settings.idw_power, gt=0)
    neighbors: int = Field(default_factory=lambda: settings.idw_neighbors, ge=1)


class EvaluationConfig(BaseModel):
    """Evaluation protocol flags (off by default)."""

    max_depth: Optional[float] = Field(default=None, gt=0)
    crop: int = Field(default=0, ge=0)


class MetricsReport(BaseModel):
    """Completion error in meters."""

    mae: float = Field(ge=0)
    rmse: float = Field(ge=0)
    evaluated_pixels: int = Field(ge=1)

    @model_validator(mode="after")
    def _power_mean(self) -> "MetricsReport":
        if self.mae > self.rmse * (1 + 1e-12) + 1e-15:
            raise ValueError(f"mae {self.mae} exceeds rmse {self.rmse}")
        return self


class DepthEncoding(BaseModel):
    """Integer depth storage: ``scale`` units per meter in 16 bits."""

    scale: int = Field(default_factory=lambda: settings.depth_scale, gt=0)
    bit_depth: Literal[16] = 16

    @property
    def max_depth(self) -> float:
        return 65535 / self.scale


class ComparisonRow(BaseModel):
    """One (strategy, k, seed) completion result."""

    strategy: SamplingStrategy
    k: int
    seed: int
    mae: float
    rmse: float
    evaluated_pixels: int

    @property
    def key(self) -> Tuple[str, int, int]:
        return (self.strategy.value, self.k, self.seed)


class ComparisonSummary(BaseModel):
    """Per-(strategy, k) means over seeds."""

    strategy: SamplingStrategy
    k: int
    runs: int = Field(ge=1)
    mae: float
    rmse: float
    evaluated_pixels: int
