"""Exception hierarchy shared by the whole package."""


class FlowforgeError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(FlowforgeError):
    """Rasters that must share dimensions do not."""


class InvalidRaster(FlowforgeError):
    """Raster data violates a construction invariant (shape, finiteness, range)."""


# --- file format errors -------------------------------------------------

class BadMagic(FlowforgeError):
    """Flow file does not start with the expected magic number."""


class BadHeader(FlowforgeError):
    """Depth file header is malformed."""


class UnsupportedColorPFM(BadHeader):
    """3-channel ("PF") portable float maps are not supported, only grayscale "Pf"."""


class TruncatedFile(FlowforgeError):
    """Payload is shorter than the header promises."""


class DimensionOverflow(FlowforgeError):
    """Header declares dimensions beyond the configured allocation cap."""


class UnsupportedFormat(FlowforgeError):
    """Image file is not an 8-bit or 16-bit PNG of 1 or 3 channels."""


class DecodeError(FlowforgeError):
    """Image file exists but cannot be decoded."""


class SchemaViolation(FlowforgeError):
    """Manifest JSON violates the schema or a manifest invariant."""


class VersionUnsupported(FlowforgeError):
    """Manifest format_version cannot be handled by this reader."""


# --- pipeline errors ----------------------------------------------------

class QualityReject(FlowforgeError):
    """Rendered pair exceeded the double-hole budget.

    Carries the finished pair; the caller decides whether to keep it.
    """

    def __init__(self, pair, fraction: float, budget: float):
        super().__init__(
            f"double-hole fraction {fraction:.4f} exceeds budget {budget:.4f}"
        )
        self.pair = pair
        self.fraction = fraction
        self.budget = budget


class CorpusEmpty(FlowforgeError):
    """Frame-pair listing contains no usable pairs."""


class EstimatorFailed(FlowforgeError):
    """External flow/depth command failed for one pair (nonzero exit or bad output)."""


class TrainerFailed(FlowforgeError):
    """External trainer command failed or produced no checkpoint."""


class NoValidPixels(FlowforgeError):
    """Metric requested over an empty valid-pixel set."""
