"""Forward warping (splatting) of a source raster under a flow field.

Every source pixel q lands at q + flow(q) in the target view and
deposits bilinear-kernel weight on the up to four integer pixels
around its landing point; landing points outside the grid are dropped,
not clamped. Multi-source collisions are resolved by one of three
policies:

- sum: plain accumulation, no normalization (brightness inconsistency
  in overlap regions is expected and preserved),
- softmax: contributions weighted by exp(inverse depth), normalized,
  so nearer sources dominate occluded targets,
- max: the single nearest-to-camera source within Euclidean radius
  sqrt(2)/2 of the target is copied verbatim.

Accumulation is float64 and sequentially ordered (np.bincount /
stable sorts); outputs are stored float32. Results are bit-identical
across runs and independent of any caller-side parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CoverageMask, DepthMap, FlowField, ImageBuffer, require_same_size

# Softmax denominators below this (after exp stabilization) are holes.
DENOMINATOR_EPS = 1e-12

# Sentinel for "no winning source" in max mode.
NO_SOURCE = -1

# Raster coordinates are clipped here before int conversion; anything
# this far out is off-grid and dropped regardless.
_COORD_LIMIT = 2.0 ** 31


@dataclass
class SplatAccumulator:
    """Mutable per-target accumulation buffers owned by a single worker.

    numerator/denominator hold the weighted sums of one splat pass;
    winner_depth/winner_source are only populated in max mode, where
    winner_source == NO_SOURCE exactly where winner_depth is at its
    -inf sentinel.
    """

    numerator: np.ndarray      # H x W x C, float64
    denominator: np.ndarray    # H x W, float64, >= 0
    winner_depth: Optional[np.ndarray] = None   # H x W, float64
    winner_source: Optional[np.ndarray] = None  # H x W, int64

    @classmethod
    def zeros(cls, h: int, w: int, c: int, with_winners: bool = False):
        acc = cls(
            numerator=np.zeros((h, w, c), dtype=np.float64),
            denominator=np.zeros((h, w), dtype=np.float64),
        )
        if with_winners:
            acc.winner_depth = np.full((h, w), -np.inf, dtype=np.float64)
            acc.winner_source = np.full((h, w), NO_SOURCE, dtype=np.int64)
        return acc


@dataclass(frozen=True)
class SplatResult:
    """Target-view image, its coverage, and (max mode) the winning sources.

    Pixels with coverage == 0 are holes and are exactly 0 in all channels.
    """

    image: ImageBuffer
    coverage: CoverageMask
    winner_source: Optional[np.ndarray] = None


def _scatter_taps(flow: FlowField):
    """Four-neighbor scatter geometry for every source pixel.

    Returns (src_lin, tap_lin, tap_weight, tap_dist2, tap_valid) where each
    tap_* array has shape (4, H*W): linear target index, bilinear weight,
    squared Euclidean distance from the landing point, and in-grid flag.
    """
    h, w = flow.height, flow.width
    fdata = flow.data.astype(np.float64)
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    tx = np.clip(xs + fdata[:, :, 0], -_COORD_LIMIT, _COORD_LIMIT).ravel()
    ty = np.clip(ys + fdata[:, :, 1], -_COORD_LIMIT, _COORD_LIMIT).ravel()

    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    fx = tx - x0
    fy = ty - y0

    src_lin = np.arange(h * w, dtype=np.int64)

    tap_lin = np.empty((4, h * w), dtype=np.int64)
    tap_weight = np.empty((4, h * w), dtype=np.float64)
    tap_dist2 = np.empty((4, h * w), dtype=np.float64)
    tap_valid = np.empty((4, h * w), dtype=bool)

    corners = (
        (0, 0, (1.0 - fx) * (1.0 - fy)),
        (1, 0, fx * (1.0 - fy)),
        (0, 1, (1.0 - fx) * fy),
        (1, 1, fx * fy),
    )
    for i, (dx, dy, weight) in enumerate(corners):
        px = x0 + dx
        py = y0 + dy
        valid = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        # off-grid taps get index 0 but weight is masked out downstream
        tap_lin[i] = np.where(valid, py * w + px, 0)
        tap_weight[i] = weight
        ddx = px - tx
        ddy = py - ty
        tap_dist2[i] = ddx * ddx + ddy * ddy
        tap_valid[i] = valid

    return src_lin, tap_lin, tap_weight, tap_dist2, tap_valid


def bilinear_weight_sums(flow: FlowField) -> np.ndarray:
    """Per-target sums of incoming bilinear weights (uncapped), float64 H x W.

    This is the shared kernel path behind both splat coverage and the
    range-map hole check, so the two agree sample-for-sample.
    """
    h, w = flow.height, flow.width
    _, tap_lin, tap_weight, _, tap_valid = _scatter_taps(flow)
    sums = np.zeros(h * w, dtype=np.float64)
    for i in range(4):
        ok = tap_valid[i]
        sums += np.bincount(tap_lin[i][ok], weights=tap_weight[i][ok], minlength=h * w)
    return sums.reshape(h, w)


def _coverage_from_sums(weight_sums: np.ndarray) -> np.ndarray:
    return np.minimum(1.0, weight_sums)


def splat_sum(src: ImageBuffer, flow: FlowField) -> SplatResult:
    """Accumulate source pixels into the target view without normalization."""
    require_same_size(src, flow)
    h, w, c = src.height, src.width, src.channels
    _, tap_lin, tap_weight, _, tap_valid = _scatter_taps(flow)

    acc = SplatAccumulator.zeros(h, w, c)
    src_flat = src.data.reshape(-1, c).astype(np.float64)
    num = acc.numerator.reshape(-1, c)
    den = acc.denominator.reshape(-1)
    for i in range(4):
        ok = tap_valid[i]
        lin = tap_lin[i][ok]
        wgt = tap_weight[i][ok]
        den += np.bincount(lin, weights=wgt, minlength=h * w)
        for ch in range(c):
            num[:, ch] += np.bincount(lin, weights=wgt * src_flat[ok, ch], minlength=h * w)

    coverage = _coverage_from_sums(acc.denominator)
    image = acc.numerator.astype(np.float32)
    return SplatResult(
        image=ImageBuffer(image),
        coverage=CoverageMask(coverage.astype(np.float32)),
    )


def splat_softmax(src: ImageBuffer, flow: FlowField, depth: DepthMap) -> SplatResult:
    """Depth-softmax collision resolution.

    Weights are exp(depth - global max depth); the shift cancels between
    numerator and denominator and keeps exp() in range. Targets whose
    denominator stays below DENOMINATOR_EPS are holes (image 0, coverage 0).
    """
    require_same_size(src, flow, depth)
    h, w, c = src.height, src.width, src.channels
    _, tap_lin, tap_weight, _, tap_valid = _scatter_taps(flow)

    d = depth.data.astype(np.float64).ravel()
    exp_w = np.exp(d - d.max())

    acc = SplatAccumulator.zeros(h, w, c)
    src_flat = src.data.reshape(-1, c).astype(np.float64)
    num = acc.numerator.reshape(-1, c)
    den = acc.denominator.reshape(-1)
    raw_sums = np.zeros(h * w, dtype=np.float64)
    for i in range(4):
        ok = tap_valid[i]
        lin = tap_lin[i][ok]
        wgt = tap_weight[i][ok]
        soft = wgt * exp_w[ok]
        raw_sums += np.bincount(lin, weights=wgt, minlength=h * w)
        den += np.bincount(lin, weights=soft, minlength=h * w)
        for ch in range(c):
            num[:, ch] += np.bincount(lin, weights=soft * src_flat[ok, ch], minlength=h * w)

    covered = den >= DENOMINATOR_EPS
    image = np.zeros((h * w, c), dtype=np.float64)
    image[covered] = num[covered] / den[covered, None]
    coverage = np.where(covered, _coverage_from_sums(raw_sums.reshape(h, w)).ravel(), 0.0)
    return SplatResult(
        image=ImageBuffer(image.reshape(h, w, c).astype(np.float32)),
        coverage=CoverageMask(coverage.reshape(h, w).astype(np.float32)),
    )


def splat_max(src: ImageBuffer, flow: FlowField, depth: DepthMap) -> SplatResult:
    """Copy, per target pixel, the closest source landing within sqrt(2)/2.

    Depth ties break toward the smallest row-major source index so the
    winner is a total order. Coverage is the same bilinear range map as
    the other modes, keeping hole semantics mode-independent.
    """
    require_same_size(src, flow, depth)
    h, w, c = src.height, src.width, src.channels
    src_lin, tap_lin, tap_weight, tap_dist2, tap_valid = _scatter_taps(flow)

    d = depth.data.astype(np.float64).ravel()

    acc = SplatAccumulator.zeros(h, w, c, with_winners=True)
    raw_sums = np.zeros(h * w, dtype=np.float64)
    cand_p = []
    cand_depth = []
    cand_src = []
    for i in range(4):
        ok = tap_valid[i]
        lin = tap_lin[i][ok]
        raw_sums += np.bincount(lin, weights=tap_weight[i][ok], minlength=h * w)
        near = ok & (tap_dist2[i] <= 0.5)
        cand_p.append(tap_lin[i][near])
        cand_depth.append(d[near])
        cand_src.append(src_lin[near])

    p_all = np.concatenate(cand_p)
    winner = acc.winner_source.reshape(-1)
    winner_depth = acc.winner_depth.reshape(-1)
    if p_all.size:
        d_all = np.concatenate(cand_depth)
        s_all = np.concatenate(cand_src)
        # per target: depth descending, then source index ascending; the
        # first row of each target group is the winner
        order = np.lexsort((s_all, -d_all, p_all))
        p_sorted = p_all[order]
        first = np.unique(p_sorted, return_index=True)[1]
        winner[p_sorted[first]] = s_all[order][first]
        winner_depth[p_sorted[first]] = d_all[order][first]

    src_flat = src.data.reshape(-1, c)
    image = np.zeros((h * w, c), dtype=np.float32)
    has_winner = winner != NO_SOURCE
    image[has_winner] = src_flat[winner[has_winner]]

    coverage = _coverage_from_sums(raw_sums.reshape(h, w))
    return SplatResult(
        image=ImageBuffer(image.reshape(h, w, c)),
        coverage=CoverageMask(coverage.astype(np.float32)),
        winner_source=winner.reshape(h, w),
    )


def splat(src: ImageBuffer, flow: FlowField, depth: Optional[DepthMap], mode: str) -> SplatResult:
    """Dispatch on mode name ("sum", "softmax", "max")."""
    if mode == "sum":
        return splat_sum(src, flow)
    if depth is None:
        raise ValueError(f"splat mode {mode!r} requires a depth map")
    if mode == "softmax":
        return splat_softmax(src, flow, depth)
    if mode == "max":
        return splat_max(src, flow, depth)
    raise ValueError(f"unknown splat mode {mode!r}")
