"""Readers and writers for the on-disk interchange formats.

These formats are the contract between the pipeline, the external
estimator/trainer commands, and any downstream consumer:

- flow fields: binary ".flo" (magic float 202021.25, int32 width and
  height, row-major interleaved float32 (u, v), all little-endian),
- inverse depth: grayscale portable float map ("Pf" header, dimensions,
  scale line whose sign encodes endianness, rows stored bottom-to-top),
- images and masks: 8/16-bit PNG, mapped to [0, 1] floats in memory.

Flow and depth round-trip bit-exactly. PNG round-trips within half a
quantization step per sample. Readers never allocate from unvalidated
header fields beyond the configured dimension cap.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core import CoverageMask, DepthMap, FlowField, ImageBuffer
from .errors import (
    BadHeader,
    BadMagic,
    DecodeError,
    DimensionOverflow,
    TruncatedFile,
    UnsupportedColorPFM,
    UnsupportedFormat,
)

FLO_MAGIC = 202021.25
DEFAULT_DIM_CAP = 16384

PathLike = Union[str, Path]


def _check_dims(width: int, height: int, cap: int, path: PathLike) -> None:
    if width <= 0 or height <= 0 or width > cap or height > cap:
        raise DimensionOverflow(
            f"{path}: header declares {width}x{height}, cap is {cap}x{cap}"
        )


# --- flow (.flo) ---------------------------------------------------------

def write_flo(flow: FlowField, path: PathLike) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack("<f", FLO_MAGIC))
        f.write(struct.pack("<ii", flow.width, flow.height))
        f.write(flow.data.astype("<f4").tobytes())


def read_flo(path: PathLike, max_dim: int = DEFAULT_DIM_CAP) -> FlowField:
    with open(path, "rb") as f:
        header = f.read(12)
        if len(header) < 12:
            raise TruncatedFile(f"{path}: header is {len(header)} bytes, need 12")
        magic = struct.unpack("<f", header[:4])[0]
        if magic != FLO_MAGIC:
            raise BadMagic(f"{path}: magic {magic!r} != {FLO_MAGIC}")
        width, height = struct.unpack("<ii", header[4:12])
        _check_dims(width, height, max_dim, path)
        expected = width * height * 2 * 4
        payload = f.read(expected + 1)
    if len(payload) != expected:
        raise TruncatedFile(
            f"{path}: payload is {len(payload)} bytes, expected exactly {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width, 2)
    return FlowField(data)


# --- depth (PFM, grayscale) ----------------------------------------------

def write_pfm(depth: DepthMap, path: PathLike) -> None:
    # negative scale marks little-endian; rows go bottom-to-top
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{depth.width} {depth.height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(depth.data[::-1].astype("<f4").tobytes())


def _read_pfm_token(f) -> bytes:
    token = b""
    while True:
        c = f.read(1)
        if not c:
            raise TruncatedFile("unexpected end of file in PFM header")
        if c.isspace():
            if token:
                return token
            continue
        token += c


def read_pfm(path: PathLike, max_dim: int = DEFAULT_DIM_CAP) -> DepthMap:
    with open(path, "rb") as f:
        kind = _read_pfm_token(f)
        if kind == b"PF":
            raise UnsupportedColorPFM(f"{path}: 3-channel PFM not supported")
        if kind != b"Pf":
            raise BadHeader(f"{path}: bad PFM identifier {kind!r}")
        try:
            width = int(_read_pfm_token(f))
            height = int(_read_pfm_token(f))
            scale = float(_read_pfm_token(f))
        except ValueError as exc:
            raise BadHeader(f"{path}: malformed PFM header ({exc})") from None
        if scale == 0.0:
            raise BadHeader(f"{path}: PFM scale must be nonzero")
        _check_dims(width, height, max_dim, path)
        expected = width * height * 4
        payload = f.read(expected + 1)
    if len(payload) != expected:
        raise TruncatedFile(
            f"{path}: payload is {len(payload)} bytes, expected exactly {expected}"
        )
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width)[::-1]
    return DepthMap(data.astype(np.float32))


# --- images (PNG) ---------------------------------------------------------

def _open_png(path: PathLike) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except UnidentifiedImageError:
        raise UnsupportedFormat(f"{path}: not a decodable image") from None
    except OSError as exc:
        raise DecodeError(f"{path}: {exc}") from None
    if img.format != "PNG":
        raise UnsupportedFormat(f"{path}: expected PNG, got {img.format}")
    return img


def read_image(path: PathLike) -> ImageBuffer:
    """Decode an 8/16-bit PNG into a [0, 1] float image."""
    img = _open_png(path)
    if img.mode == "P":
        img = img.convert("RGB")
    arr = np.asarray(img)
    if img.mode in ("L", "RGB"):
        return ImageBuffer(arr.astype(np.float32) / 255.0)
    if img.mode in ("I", "I;16"):
        return ImageBuffer(arr.astype(np.float32) / 65535.0)
    raise UnsupportedFormat(f"{path}: unsupported PNG mode {img.mode}")


def _quantize(data: np.ndarray, levels: int) -> np.ndarray:
    # round half up, clamped to the representable range
    clipped = np.clip(data.astype(np.float64), 0.0, 1.0)
    return np.floor(clipped * levels + 0.5).astype(np.uint32)


def write_image(img: ImageBuffer, path: PathLike, bit_depth: int = 8) -> None:
    """Quantize (round half up) to the requested bit depth and save as PNG."""
    if bit_depth == 8:
        q = _quantize(img.data, 255).astype(np.uint8)
        if img.channels == 1:
            Image.fromarray(q[:, :, 0], mode="L").save(path, format="PNG")
        else:
            Image.fromarray(q, mode="RGB").save(path, format="PNG")
    elif bit_depth == 16:
        if img.channels != 1:
            raise UnsupportedFormat("16-bit PNG output is grayscale only")
        q = _quantize(img.data, 65535).astype(np.uint16)
        Image.fromarray(q[:, :, 0]).save(path, format="PNG")
    else:
        raise UnsupportedFormat(f"unsupported bit depth {bit_depth}")


# --- coverage masks (16-bit PNG, debug artifact) ---------------------------

def write_mask(mask: CoverageMask, path: PathLike) -> None:
    q = _quantize(mask.data, 65535).astype(np.uint16)
    Image.fromarray(q).save(path, format="PNG")


def read_mask(path: PathLike) -> CoverageMask:
    img = _open_png(path)
    if img.mode not in ("I", "I;16"):
        raise UnsupportedFormat(f"{path}: mask must be a 16-bit grayscale PNG")
    arr = np.asarray(img).astype(np.float32) / 65535.0
    return CoverageMask(np.clip(arr, 0.0, 1.0))
