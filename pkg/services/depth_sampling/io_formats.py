"""Readers and writers for depth images, intrinsics, normal maps and sample lists."""

import struct
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import cv2
import numpy as np
from PIL import Image

from services.common.logging import get_logger

from .completion import ComparisonTable
from .exceptions import DepthRangeError, FormatError, ParseError
from .models import (
    MAX_CURVATURE,
    CameraIntrinsics,
    DepthEncoding,
    DepthMap,
    NormalMap,
    PlaneSpec,
    ReliabilityMap,
    SampleSet,
    SceneKind,
    SceneSpec,
    SparseDepthMap,
    SphereSpec,
)
from .normals import curvature_to_gray, normal_map_to_rgb

logger = get_logger(__name__)

PathLike = Union[str, Path]

FLOAT_MAGIC = b"DPTH"
FLOAT_HEADER = struct.Struct("<4sIII")
NORMAL_RECORD = np.dtype([("valid", "u1"), ("n", "<f4", (3,)), ("kappa", "<f4")])
UINT16_MAX = 65535
INTRINSIC_KEYS = ("fx", "fy", "cx", "cy")


# Key-value text files


def parse_key_values(path: PathLike) -> Dict[str, str]:
    """One ``key value`` (or ``key=value``) pair per line; ``#`` starts a comment."""
    values: Dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace("=", " ", 1).split(None, 1)
        if len(parts) != 2:
            raise FormatError(f"{path}:{number}: expected 'key value', got {raw!r}")
        values[parts[0].strip().lower()] = parts[1].strip()
    return values


def _float(values: Dict[str, str], key: str) -> float:
    if key not in values:
        raise ParseError(key)
    try:
        return float(values[key])
    except ValueError:
        raise ParseError(key, f"{key}: not a number: {values[key]!r}") from None


def _int(values: Dict[str, str], key: str) -> int:
    if key not in values:
        raise ParseError(key)
    try:
        return int(values[key])
    except ValueError:
        raise ParseError(key, f"{key}: not an integer: {values[key]!r}") from None


def read_intrinsics(path: PathLike) -> CameraIntrinsics:
    """Parse fx, fy, cx, cy.

    Signs and principal-point bounds are checked when paired with an image.
    """
    values = parse_key_values(path)
    return _intrinsics(values)


def _intrinsics(values: Dict[str, str]) -> CameraIntrinsics:
    return CameraIntrinsics(**{key: _float(values, key) for key in INTRINSIC_KEYS})


def write_intrinsics(intrinsics: CameraIntrinsics, path: PathLike) -> None:
    lines = [f"{key} {getattr(intrinsics, key)!r}" for key in INTRINSIC_KEYS]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _plane(values: Dict[str, str], suffix: str = "") -> PlaneSpec:
    if not suffix and "tilt_deg" in values:
        tilt = _float(values, "tilt_deg")
        return PlaneSpec.tilted(tilt, _float(values, "distance"))
    normal = tuple(_float(values, f"n{axis}{suffix}") for axis in "xyz")
    return PlaneSpec(normal=normal, offset=_float(values, f"offset{suffix}"))


def read_scene_spec(path: PathLike) -> SceneSpec:
    """Scene file: kind, width, height, fx, fy, cx, cy plus the surface keys.

    plane: ``nx ny nz offset`` or ``tilt_deg distance``; corner: a plane plus
    ``nx2 ny2 nz2 offset2``; sphere: ``center_x center_y center_z radius``.
    """
    values = parse_key_values(path)
    if "kind" not in values:
        raise ParseError("kind")
    try:
        kind = SceneKind(values["kind"].lower())
    except ValueError:
        raise ParseError("kind", f"kind: unknown scene {values['kind']!r}") from None

    fields: Dict[str, Any] = {
        "kind": kind,
        "width": _int(values, "width"),
        "height": _int(values, "height"),
        "intrinsics": _intrinsics(values),
    }
    if kind in (SceneKind.PLANE, SceneKind.CORNER):
        fields["plane"] = _plane(values)
    if kind == SceneKind.CORNER:
        fields["second_plane"] = _plane(values, "2")
    if kind == SceneKind.SPHERE:
        fields["sphere"] = SphereSpec(
            center=tuple(_float(values, f"center_{axis}") for axis in "xyz"),
            radius=_float(values, "radius"),
        )
    return SceneSpec(**fields)


# Depth images


def quantize_depth(depth: DepthMap, enc: DepthEncoding) -> np.ndarray:
    """Round-half-up quantization to uint16; invalid pixels become 0."""
    scaled = np.floor(depth.values * enc.scale + 0.5)
    too_far = depth.valid & (scaled > UINT16_MAX)
    if too_far.any():
        raise DepthRangeError(
            f"{int(too_far.sum())} depth(s) exceed {enc.max_depth:.3f} m "
            f"at scale {enc.scale}"
        )
    too_near = depth.valid & (scaled < 1)
    if too_near.any():
        raise DepthRangeError(
            f"{int(too_near.sum())} valid depth(s) below {0.5 / enc.scale} m "
            "quantize to the invalid value 0"
        )
    return np.where(depth.valid, scaled, 0).astype(np.uint16)


def write_depth_png(
    depth: DepthMap, path: PathLike, enc: Optional[DepthEncoding] = None
) -> None:
    """Single-channel 16-bit PNG, ``scale`` units per meter."""
    enc = enc or DepthEncoding()
    image = quantize_depth(depth, enc)
    if not cv2.imwrite(str(path), image):
        raise OSError(f"could not write depth image {path}")


def write_sparse_png(
    sparse: SparseDepthMap, path: PathLike, enc: Optional[DepthEncoding] = None
) -> None:
    write_depth_png(sparse.to_depth_map(), path, enc)


def read_depth_png(path: PathLike, enc: Optional[DepthEncoding] = None) -> DepthMap:
    """0 is an invalid pixel; q > 0 is q / scale meters."""
    enc = enc or DepthEncoding()
    if not Path(path).is_file():
        raise FileNotFoundError(f"depth image not found: {path}")
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise FormatError(f"{path}: not a readable image")
    if image.ndim != 2:
        raise FormatError(f"{path}: expected 1 channel, got {image.shape[2]}")
    if image.dtype != np.uint16:
        raise FormatError(f"{path}: expected 16-bit depth, got {image.dtype}")
    raw = image.astype(np.float64)
    valid = image > 0
    return DepthMap(values=np.where(valid, raw / enc.scale, 0.0), valid=valid)


def write_float_grid(values: np.ndarray, path: PathLike) -> None:
    """16-byte header (magic, width, height, reserved) then float32 LE row-major."""
    grid = np.asarray(values, dtype="<f4")
    if grid.ndim != 2:
        raise FormatError(f"expected a 2-D grid, got shape {grid.shape}")
    height, width = grid.shape
    with open(path, "wb") as handle:
        handle.write(FLOAT_HEADER.pack(FLOAT_MAGIC, width, height, 0))
        handle.write(grid.tobytes(order="C"))


def read_float_grid(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < FLOAT_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, width, height, _ = FLOAT_HEADER.unpack_from(data)
    if magic != FLOAT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = FLOAT_HEADER.size + 4 * width * height
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    grid = np.frombuffer(data, dtype="<f4", offset=FLOAT_HEADER.size)
    return grid.reshape(height, width).astype(np.float64)


def write_depth_float(depth: DepthMap, path: PathLike) -> None:
    write_float_grid(np.where(depth.valid, depth.values, 0.0), path)


def read_depth_float(path: PathLike) -> DepthMap:
    return DepthMap.from_array(read_float_grid(path))


# Normal maps and inspection images


def write_normal_map(normal_map: NormalMap, path: PathLike) -> None:
    """17-byte records: valid flag, nx, ny, nz, kappa (little-endian, row-major)."""
    records = np.zeros(normal_map.shape[0] * normal_map.shape[1], dtype=NORMAL_RECORD)
    records["valid"] = normal_map.valid.ravel()
    records["n"] = normal_map.normals.reshape(-1, 3)
    records["kappa"] = normal_map.curvature.ravel()
    Path(path).write_bytes(records.tobytes())


def read_normal_map(path: PathLike, width: int, height: int) -> NormalMap:
    data = Path(path).read_bytes()
    expected = NORMAL_RECORD.itemsize * width * height
    if len(data) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {width}x{height}, got {len(data)}"
        )
    records = np.frombuffer(data, dtype=NORMAL_RECORD)
    valid = records["valid"].reshape(height, width) != 0
    normals = records["n"].astype(np.float64).reshape(height, width, 3)
    curvature = records["kappa"].astype(np.float64).reshape(height, width)
    # float32 round trip: renormalize and re-clamp
    lengths = np.linalg.norm(normals, axis=-1, keepdims=True)
    unit = normals / np.where(lengths > 0, lengths, 1.0)
    return NormalMap(
        normals=np.where(valid[..., np.newaxis], unit, 0.0),
        curvature=np.where(valid, np.clip(curvature, 0.0, MAX_CURVATURE), 0.0),
        valid=valid,
    )


def _save_8bit(image: np.ndarray, path: PathLike) -> None:
    Image.fromarray(np.ascontiguousarray(image)).save(path, format="PNG")


def reliability_to_gray(rel: ReliabilityMap) -> np.ndarray:
    """round(255 r), half away from zero; invalid pixels are 0."""
    gray = np.floor(rel.scores * 255.0 + 0.5)
    gray[~rel.valid] = 0
    return np.clip(gray, 0, 255).astype(np.uint8)


def write_reliability_png(rel: ReliabilityMap, path: PathLike) -> None:
    _save_8bit(reliability_to_gray(rel), path)


def write_reliability_float(rel: ReliabilityMap, path: PathLike) -> None:
    write_float_grid(np.where(rel.valid, rel.scores, 0.0), path)


def write_normal_png(normal_map: NormalMap, path: PathLike) -> None:
    _save_8bit(normal_map_to_rgb(normal_map), path)


def write_curvature_png(normal_map: NormalMap, path: PathLike) -> None:
    _save_8bit(curvature_to_gray(normal_map), path)


# Sample lists and tables


def write_samples(samples: SampleSet, path: PathLike) -> None:
    """One ``u v depth_m`` line per sample, depth to 6 significant digits."""
    lines = [
        f"{int(u)} {int(v)} {float(d):.6g}"
        for u, v, d in zip(samples.us, samples.vs, samples.depths)
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_samples(path: PathLike, width: int, height: int) -> SampleSet:
    entries: List[Tuple[int, float]] = []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for number, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        parts = raw.split()
        try:
            u, v, depth = int(parts[0]), int(parts[1]), float(parts[2])
        except (IndexError, ValueError):
            raise FormatError(
                f"{path}:{number}: expected 'u v depth', got {raw!r}"
            ) from None
        if len(parts) != 3 or not (0 <= u < width and 0 <= v < height):
            raise FormatError(f"{path}:{number}: sample outside {width}x{height}")
        entries.append((v * width + u, depth))
    indices = np.array([e[0] for e in entries], dtype=np.int64)
    depths = np.array([e[1] for e in entries], dtype=np.float64)
    return SampleSet(indices=indices, depths=depths, width=width, height=height)


def write_comparison_csv(table: ComparisonTable, path: PathLike) -> None:
    Path(path).write_text(table.to_csv(), encoding="utf-8")
    logger.info("Comparison table written", path=str(path))
