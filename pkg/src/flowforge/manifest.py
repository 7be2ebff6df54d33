"""Dataset manifest: the human-auditable JSON index of a generated dataset.

The manifest records every sample triplet (frame 1, synthesized frame 2,
flow label), the render settings that produced them, per-pair failures,
and the self-training iteration for provenance. Canonical form: UTF-8
JSON with sorted keys and a trailing newline; writing then reading is an
identity. Sample paths are stored relative to the manifest's directory.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

from .core import SampleRecord
from .errors import SchemaViolation, VersionUnsupported
from .render import HOLE_FILL_MODES, SPLAT_MODES

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

PathLike = Union[str, Path]

_SAMPLE_KEYS = {
    "image1_path",
    "image2_path",
    "flow_path",
    "alpha",
    "source_video_id",
    "source_frame_index",
    "em_iteration",
    "mask_path",
    "double_hole_fraction",
}

_MANIFEST_KEYS = {
    "format_version",
    "em_iteration",
    "created_at",
    "source_description",
    "samples",
    "alpha_range",
    "splat_mode",
    "hole_fill_mode",
    "failures",
}


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH makes corpus runs reproducible
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


@dataclass
class FailureRecord:
    """One per-pair fault from the generation step (fault isolation, not fatal)."""

    source_video_id: str
    source_frame_index: int
    stage: str
    message: str

    def to_dict(self) -> dict:
        return {
            "source_video_id": self.source_video_id,
            "source_frame_index": self.source_frame_index,
            "stage": self.stage,
            "message": self.message,
        }


@dataclass
class DatasetManifest:
    em_iteration: int
    source_description: str
    alpha_range: Tuple[float, float]
    splat_mode: str
    hole_fill_mode: str
    samples: List[SampleRecord] = field(default_factory=list)
    failures: List[FailureRecord] = field(default_factory=list)
    created_at: str = field(default_factory=_timestamp)
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.em_iteration < 0:
            raise SchemaViolation("em_iteration must be >= 0")
        low, high = self.alpha_range
        if not low <= high:
            raise SchemaViolation(f"alpha_range is not ordered: {self.alpha_range}")
        if self.splat_mode not in SPLAT_MODES:
            raise SchemaViolation(f"unknown splat_mode {self.splat_mode!r}")
        if self.hole_fill_mode not in HOLE_FILL_MODES:
            raise SchemaViolation(f"unknown hole_fill_mode {self.hole_fill_mode!r}")
        for column in ("image1_path", "image2_path", "flow_path"):
            paths = [getattr(s, column) for s in self.samples]
            if len(set(paths)) != len(paths):
                raise SchemaViolation(f"duplicate {column} entries in manifest")
        for s in self.samples:
            if not (low <= s.alpha <= high):
                raise SchemaViolation(
                    f"sample alpha {s.alpha} outside alpha_range [{low}, {high}]"
                )
            if s.em_iteration != self.em_iteration:
                raise SchemaViolation(
                    f"sample em_iteration {s.em_iteration} != manifest {self.em_iteration}"
                )


def _sample_to_dict(s: SampleRecord) -> dict:
    return {
        "image1_path": s.image1_path,
        "image2_path": s.image2_path,
        "flow_path": s.flow_path,
        "alpha": s.alpha,
        "source_video_id": s.source_video_id,
        "source_frame_index": s.source_frame_index,
        "em_iteration": s.em_iteration,
        "mask_path": s.mask_path,
        "double_hole_fraction": s.double_hole_fraction,
    }


def manifest_to_dict(m: DatasetManifest) -> dict:
    out = {
        "format_version": m.format_version,
        "em_iteration": m.em_iteration,
        "created_at": m.created_at,
        "source_description": m.source_description,
        "alpha_range": [m.alpha_range[0], m.alpha_range[1]],
        "splat_mode": m.splat_mode,
        "hole_fill_mode": m.hole_fill_mode,
        "samples": [_sample_to_dict(s) for s in m.samples],
        "failures": [f.to_dict() for f in m.failures],
    }
    out.update(m.extra)
    return out


def write_manifest(m: DatasetManifest, path: PathLike) -> None:
    m.validate()
    text = json.dumps(manifest_to_dict(m), sort_keys=True, ensure_ascii=False, indent=2)
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _parse_sample(d: dict, strict: bool) -> SampleRecord:
    unknown = set(d) - _SAMPLE_KEYS
    if unknown and strict:
        raise SchemaViolation(f"unknown sample keys: {sorted(unknown)}")
    try:
        return SampleRecord(
            image1_path=d["image1_path"],
            image2_path=d["image2_path"],
            flow_path=d["flow_path"],
            alpha=float(d["alpha"]),
            source_video_id=str(d["source_video_id"]),
            source_frame_index=int(d["source_frame_index"]),
            em_iteration=int(d["em_iteration"]),
            mask_path=d.get("mask_path"),
            double_hole_fraction=d.get("double_hole_fraction"),
        )
    except KeyError as exc:
        raise SchemaViolation(f"sample record missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(f"malformed sample record: {exc}") from None


def read_manifest(path: PathLike) -> DatasetManifest:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise SchemaViolation(f"{path}: manifest must be a JSON object")

    version = raw.get("format_version")
    if not isinstance(version, int) or version < 1:
        raise VersionUnsupported(f"{path}: unusable format_version {version!r}")
    strict = version == FORMAT_VERSION
    unknown = set(raw) - _MANIFEST_KEYS
    if unknown:
        if strict:
            raise SchemaViolation(f"{path}: unknown manifest keys: {sorted(unknown)}")
        log.warning("%s: preserving unknown keys from newer manifest: %s",
                    path, sorted(unknown))

    try:
        m = DatasetManifest(
            format_version=version,
            em_iteration=int(raw["em_iteration"]),
            created_at=str(raw["created_at"]),
            source_description=str(raw["source_description"]),
            alpha_range=(float(raw["alpha_range"][0]), float(raw["alpha_range"][1])),
            splat_mode=str(raw["splat_mode"]),
            hole_fill_mode=str(raw["hole_fill_mode"]),
            samples=[_parse_sample(s, strict) for s in raw["samples"]],
            failures=[
                FailureRecord(
                    source_video_id=str(f["source_video_id"]),
                    source_frame_index=int(f["source_frame_index"]),
                    stage=str(f["stage"]),
                    message=str(f["message"]),
                )
                for f in raw.get("failures", [])
            ],
            extra={k: raw[k] for k in unknown},
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise SchemaViolation(f"{path}: malformed manifest ({exc})") from None
    m.validate()
    return m


def verify_sample_files(m: DatasetManifest, base_dir: PathLike) -> List[str]:
    """Check that every referenced file exists and the three rasters agree in size.

    Returns a list of human-readable problems; empty means the manifest is
    consistent with what is on disk.
    """
    from . import formats

    base = Path(base_dir)
    problems = []
    for s in m.samples:
        paths = {
            "image1": base / s.image1_path,
            "image2": base / s.image2_path,
            "flow": base / s.flow_path,
        }
        missing = [name for name, p in paths.items() if not p.is_file()]
        if missing:
            problems.append(f"{s.image2_path}: missing files {missing}")
            continue
        try:
            sizes = {
                "image1": formats.read_image(paths["image1"]),
                "image2": formats.read_image(paths["image2"]),
                "flow": formats.read_flo(paths["flow"]),
            }
        except Exception as exc:  # surface per-sample, keep scanning
            problems.append(f"{s.image2_path}: unreadable ({exc})")
            continue
        dims = {(r.height, r.width) for r in sizes.values()}
        if len(dims) > 1:
            problems.append(f"{s.image2_path}: raster dimensions disagree {sorted(dims)}")
    return problems


# --- corpus listing --------------------------------------------------------

@dataclass(frozen=True)
class CorpusPair:
    image1_path: Path
    image2_path: Path
    video_id: str
    frame_index: int


def read_corpus(path: PathLike) -> List[CorpusPair]:
    """Parse the frame-pair listing: img1<TAB>img2<TAB>video_id<TAB>frame_index.

    Relative image paths are resolved against the listing's directory.
    """
    listing = Path(path)
    base = listing.parent
    pairs = []
    for lineno, line in enumerate(listing.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        img1, img2, video_id, frame_index = parts
        try:
            idx = int(frame_index)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: frame_index {frame_index!r} is not an integer") from None
        pairs.append(CorpusPair(
            image1_path=base / img1,
            image2_path=base / img2,
            video_id=video_id,
            frame_index=idx,
        ))
    return pairs
