"""Range-map hole detection and bi-directional hole filling.

A target pixel that receives no forward-splatted mass is a hole
(disocclusion or expansion). The range map caps the per-target bilinear
weight sums at 1, so holes are exactly the zeros. Holes in the forward
render are filled from the complementary backward render; the mask is
used continuously, not binarized, so partial coverage gets partial fill.
"""

from __future__ import annotations

import numpy as np

from .core import CoverageMask, FlowField, ImageBuffer, require_same_size
from .splatting import SplatResult, bilinear_weight_sums


def range_map(flow: FlowField) -> CoverageMask:
    """min(1, sum of incoming bilinear weights) per target pixel.

    Shares the kernel accumulation path with the splat functions, so the
    result equals splat coverage under the same flow sample-for-sample.
    """
    sums = bilinear_weight_sums(flow)
    return CoverageMask(np.minimum(1.0, sums).astype(np.float32))


def bhf_fuse(i1s: SplatResult, mask: CoverageMask, i2s: SplatResult) -> ImageBuffer:
    """Fill forward-render holes from the backward render.

    out = i1s + (1 - mask) * i2s, per pixel per channel, clamped to [0, 1].
    The mask must be the range map of the same disturbed forward flow
    that produced i1s.
    """
    require_same_size(i1s.image, mask, i2s.image)
    m = mask.data.astype(np.float64)[:, :, None]
    fused = i1s.image.data.astype(np.float64) + (1.0 - m) * i2s.image.data.astype(np.float64)
    return ImageBuffer(np.clip(fused, 0.0, 1.0).astype(np.float32))


def double_hole_fraction(mask: CoverageMask, backward: SplatResult) -> float:
    """Fraction of pixels that are holes in BOTH directions.

    These pixels stay black after fusion; the renderer uses the count as
    a per-sample quality gate.
    """
    require_same_size(mask, backward.image)
    double = (mask.data == 0.0) & (backward.coverage.data == 0.0)
    return float(np.count_nonzero(double)) / double.size
