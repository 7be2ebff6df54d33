"""Rendering of one training pair from a real frame pair.

Given two frames, their forward/backward flows and per-frame inverse
depth, a disturbance factor alpha rescales the flows so the synthesized
view need not coincide with frame 2: the forward flow is scaled by
alpha and the backward flow by (1 - alpha). Both frames are then
forward-splatted toward that view, holes in the forward render are
filled from the backward one, and the scaled forward flow is emitted as
the label — the label is exactly the geometry that produced the image.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .core import CoverageMask, DepthMap, FlowField, ImageBuffer, require_same_size
from .errors import QualityReject
from .hole_fill import bhf_fuse, double_hole_fraction, range_map
from .splatting import splat

SPLAT_MODES = ("sum", "softmax", "max")
HOLE_FILL_MODES = ("none", "bhf")


@dataclass
class RenderConfig:
    """Knobs of the pair renderer; defaults are the recommended settings."""

    alpha_range: Tuple[float, float] = (0.0, 2.0)
    splat_mode: str = "softmax"
    hole_fill_mode: str = "bhf"
    rng_seed: int = 0
    max_double_hole_fraction: float = 0.05

    def __post_init__(self):
        low, high = self.alpha_range
        if not (np.isfinite(low) and np.isfinite(high) and low <= high):
            raise ValueError(f"invalid alpha range {self.alpha_range!r}")
        self.alpha_range = (float(low), float(high))
        if self.splat_mode not in SPLAT_MODES:
            raise ValueError(f"splat_mode must be one of {SPLAT_MODES}, got {self.splat_mode!r}")
        if self.hole_fill_mode not in HOLE_FILL_MODES:
            raise ValueError(
                f"hole_fill_mode must be one of {HOLE_FILL_MODES}, got {self.hole_fill_mode!r}"
            )
        if not 0.0 <= self.max_double_hole_fraction <= 1.0:
            raise ValueError("max_double_hole_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "alpha_range": list(self.alpha_range),
            "splat_mode": self.splat_mode,
            "hole_fill_mode": self.hole_fill_mode,
            "rng_seed": self.rng_seed,
            "max_double_hole_fraction": self.max_double_hole_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RenderConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown render config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "alpha_range" in kwargs:
            kwargs["alpha_range"] = tuple(kwargs["alpha_range"])
        return cls(**kwargs)


@dataclass(frozen=True)
class RenderedPair:
    """One finished training triplet plus render diagnostics."""

    image1: ImageBuffer
    image2_new: ImageBuffer
    flow_label: FlowField
    alpha: float
    double_hole_fraction: float
    mask: CoverageMask


def disturb_flows(f12: FlowField, f21: FlowField, alpha: float) -> Tuple[FlowField, FlowField]:
    """Scale forward flow by alpha and backward flow by (1 - alpha)."""
    return f12.scaled(float(alpha)), f21.scaled(1.0 - float(alpha))


def sample_alpha(cfg: RenderConfig, rng: np.random.Generator) -> float:
    """Uniform draw from the configured range; reproducible from the seed."""
    low, high = cfg.alpha_range
    return float(rng.uniform(low, high))


def make_rng(cfg: RenderConfig) -> np.random.Generator:
    # mask so negative seeds stay valid SeedSequence entropy
    return np.random.default_rng(cfg.rng_seed & 0xFFFF_FFFF_FFFF_FFFF)


def render_pair(
    i1: ImageBuffer,
    i2: ImageBuffer,
    f12: FlowField,
    f21: FlowField,
    d1: Optional[DepthMap],
    d2: Optional[DepthMap],
    cfg: RenderConfig,
    alpha: float,
) -> RenderedPair:
    """Render the training pair (i1, new second image, scaled forward flow).

    Pipeline: scale the flows by alpha / (1 - alpha), splat i1 forward and
    i2 backward into the target view, compute the hole mask from the scaled
    forward flow, then fuse (or keep the raw forward render when hole
    filling is off).

    Raises QualityReject, carrying the finished pair, when the fraction of
    pixels that are holes in both renders exceeds the configured budget;
    the caller decides whether to keep the pair.
    """
    require_same_size(i1, i2, f12, f21, d1, d2)
    if cfg.splat_mode != "sum":
        if d1 is None or d2 is None:
            raise ValueError(f"splat mode {cfg.splat_mode!r} requires depth1 and depth2")

    f12p, f21p = disturb_flows(f12, f21, alpha)
    i1s = splat(i1, f12p, d1, cfg.splat_mode)
    i2s = splat(i2, f21p, d2, cfg.splat_mode)
    mask = range_map(f12p)

    if cfg.hole_fill_mode == "bhf":
        image2_new = bhf_fuse(i1s, mask, i2s)
    else:
        image2_new = i1s.image

    fraction = double_hole_fraction(mask, i2s)
    pair = RenderedPair(
        image1=i1,
        image2_new=image2_new,
        flow_label=f12p,
        alpha=float(alpha),
        double_hole_fraction=fraction,
        mask=mask,
    )
    if fraction > cfg.max_double_hole_fraction:
        raise QualityReject(pair, fraction, cfg.max_double_hole_fraction)
    return pair
