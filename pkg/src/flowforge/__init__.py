"""Training-pair generation for optical flow from real video frames.

Renders (frame 1, synthesized frame 2, dense flow label) triplets by
forward-splatting real frames along estimated flows, with depth-aware
occlusion resolution and bi-directional hole filling, and orchestrates
the outer self-training loop that retrains an external flow estimator
on the generated data.
"""

from .core import (
    CoverageMask,
    DepthMap,
    FlowField,
    ImageBuffer,
    SampleRecord,
    bilinear_kernel,
    sample_bilinear,
)
from .errors import FlowforgeError
from .hole_fill import bhf_fuse, range_map
from .render import RenderConfig, RenderedPair, disturb_flows, render_pair, sample_alpha
from .splatting import SplatResult, splat, splat_max, splat_softmax, splat_sum

__version__ = "0.1.0"

__all__ = [
    "CoverageMask",
    "DepthMap",
    "FlowField",
    "FlowforgeError",
    "ImageBuffer",
    "RenderConfig",
    "RenderedPair",
    "SampleRecord",
    "SplatResult",
    "bhf_fuse",
    "bilinear_kernel",
    "disturb_flows",
    "range_map",
    "render_pair",
    "sample_alpha",
    "sample_bilinear",
    "splat",
    "splat_max",
    "splat_softmax",
    "splat_sum",
]
