"""Shared raster types and elementary bilinear operations.

All rasters are numpy arrays in row-major order with pixel centers at
integer coordinates and the origin at the top-left. Flow components are
(u, v) with u positive rightward and v positive downward, in pixels.
Images are floating point with a nominal [0, 1] range regardless of the
on-disk bit depth. Inverse depth is dimensionless; larger means closer
to the camera.

All types are immutable after construction (the underlying arrays are
marked read-only) and therefore safe to share across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, InvalidRaster


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float32)
    if out is arr:
        out = arr.copy()
    out.flags.writeable = False
    return out


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise InvalidRaster(f"{what} contains non-finite samples")


@dataclass(frozen=True)
class ImageBuffer:
    """H x W x C floating-point raster, C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise InvalidRaster(
                f"image must be HxW or HxWxC with C in (1, 3), got shape {arr.shape}"
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidRaster(f"image dimensions must be positive, got {arr.shape}")
        _require_finite(arr, "image")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FlowField:
    """H x W x 2 dense displacement map, (u, v) in pixels."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise InvalidRaster(f"flow must be HxWx2, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidRaster(f"flow dimensions must be positive, got {arr.shape}")
        _require_finite(arr, "flow")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def scaled(self, factor: float) -> "FlowField":
        """Componentwise scaling; factor 1.0 returns a bitwise-equal field."""
        if factor == 1.0:
            return FlowField(self.data)
        return FlowField(self.data * np.float32(factor))


@dataclass(frozen=True)
class DepthMap:
    """H x W inverse-depth map; larger value = closer to camera."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise InvalidRaster(f"depth must be HxW, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidRaster(f"depth dimensions must be positive, got {arr.shape}")
        _require_finite(arr, "depth")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class CoverageMask:
    """H x W map in [0, 1]; 0 marks holes (no splatted contribution)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise InvalidRaster(f"mask must be HxW, got shape {arr.shape}")
        _require_finite(arr, "mask")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise InvalidRaster("mask values must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class SampleRecord:
    """One generated training triplet plus its provenance.

    Paths are stored relative to the manifest that lists them. The flow
    stored at ``flow_path`` is exactly the disturbed forward flow that
    rendered ``image2_path``.
    """

    image1_path: str
    image2_path: str
    flow_path: str
    alpha: float
    source_video_id: str
    source_frame_index: int
    em_iteration: int = 0
    mask_path: Optional[str] = None
    double_hole_fraction: Optional[float] = None

    def __post_init__(self):
        if self.em_iteration < 0:
            raise ValueError("em_iteration must be >= 0")
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")


def require_same_size(*rasters) -> None:
    """Raise DimensionMismatch unless all rasters share height and width."""
    sizes = {(r.height, r.width) for r in rasters if r is not None}
    if len(sizes) > 1:
        raise DimensionMismatch(f"raster dimensions disagree: {sorted(sizes)}")


def bilinear_kernel(u) -> float:
    """Weight of a target pixel at offset u from a splatted landing point.

    b(u) = max(0, 1 - |u_x|) * max(0, 1 - |u_y|)
    """
    ux, uy = float(u[0]), float(u[1])
    return max(0.0, 1.0 - abs(ux)) * max(0.0, 1.0 - abs(uy))


def sample_bilinear(img: ImageBuffer, x: float, y: float) -> np.ndarray:
    """Bilinear lookup at (x, y); coordinates clamp to the image border.

    Returns one float64 value per channel.
    """
    h, w = img.height, img.width
    x = min(max(float(x), 0.0), w - 1.0)
    y = min(max(float(y), 0.0), h - 1.0)
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    data = img.data.astype(np.float64)
    top = (1.0 - fx) * data[y0, x0] + fx * data[y0, x1]
    bot = (1.0 - fx) * data[y1, x0] + fx * data[y1, x1]
    return (1.0 - fy) * top + fy * bot
