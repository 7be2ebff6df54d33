"""Flow evaluation metrics and corpus motion statistics.

End-point error is the mean Euclidean distance between predicted and
ground-truth flow vectors over valid pixels. The outlier rate follows
the KITTI convention: a pixel is an outlier when its error exceeds
both 3 px and 5% of the ground-truth magnitude. Motion histograms
aggregate per-pixel flow magnitudes over a whole generated dataset.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import CoverageMask, FlowField, require_same_size
from .errors import NoValidPixels
from .manifest import DatasetManifest

PathLike = Union[str, Path]

F1_ABS_THRESHOLD = 3.0   # px
F1_REL_THRESHOLD = 0.05  # fraction of ground-truth magnitude


@dataclass(frozen=True)
class FlowMetrics:
    epe: float
    f1: float
    valid_count: int

    def to_dict(self) -> dict:
        return {"epe": self.epe, "f1": self.f1, "valid_count": self.valid_count}


def _valid_selector(shape, valid: Optional[CoverageMask]) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    return valid.data > 0.5


def _endpoint_errors(pred: FlowField, gt: FlowField) -> np.ndarray:
    diff = pred.data.astype(np.float64) - gt.data.astype(np.float64)
    return np.sqrt(np.sum(diff * diff, axis=2))


def epe(pred: FlowField, gt: FlowField, valid: Optional[CoverageMask] = None) -> float:
    """Mean Euclidean end-point error over valid pixels."""
    require_same_size(pred, gt, valid)
    sel = _valid_selector((pred.height, pred.width), valid)
    if not sel.any():
        raise NoValidPixels("no valid pixels to evaluate")
    return float(_endpoint_errors(pred, gt)[sel].mean())


def f1_rate(pred: FlowField, gt: FlowField, valid: Optional[CoverageMask] = None) -> float:
    """Fraction of valid pixels with error > 3 px and > 5% of the gt magnitude."""
    require_same_size(pred, gt, valid)
    sel = _valid_selector((pred.height, pred.width), valid)
    if not sel.any():
        raise NoValidPixels("no valid pixels to evaluate")
    err = _endpoint_errors(pred, gt)[sel]
    mag = np.sqrt(np.sum(gt.data.astype(np.float64) ** 2, axis=2))[sel]
    outlier = (err > F1_ABS_THRESHOLD) & (err > F1_REL_THRESHOLD * mag)
    return float(np.count_nonzero(outlier)) / err.size


def evaluate(pred: FlowField, gt: FlowField, valid: Optional[CoverageMask] = None) -> FlowMetrics:
    require_same_size(pred, gt, valid)
    sel = _valid_selector((pred.height, pred.width), valid)
    return FlowMetrics(
        epe=epe(pred, gt, valid),
        f1=f1_rate(pred, gt, valid),
        valid_count=int(np.count_nonzero(sel)),
    )


# --- motion-magnitude histograms -------------------------------------------

@dataclass(frozen=True)
class MotionHistogram:
    bin_edges: Tuple[float, ...]   # strictly increasing
    counts: Tuple[int, ...]        # len(bin_edges) - 1, sums to total
    total: int
    skipped_samples: int = 0


def default_bin_edges() -> List[float]:
    """A [0, 0.1) bin followed by 32 log-spaced edges from 0.1 to 256 px."""
    return [0.0] + list(np.logspace(np.log10(0.1), np.log10(256.0), 32))


def histogram_from_magnitudes(mags: Sequence[np.ndarray], bin_edges: Sequence[float],
                              skipped: int = 0) -> MotionHistogram:
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or not np.all(np.diff(edges) > 0):
        raise ValueError("bin_edges must be a strictly increasing 1-D sequence")
    counts = np.zeros(edges.size - 1, dtype=np.int64)
    total = 0
    for m in mags:
        flat = np.asarray(m, dtype=np.float64).ravel()
        # magnitudes at or beyond the last edge land in the final bin so
        # the histogram conserves the pixel count
        clipped = np.minimum(flat, edges[-1])
        counts += np.histogram(clipped, bins=edges)[0]
        total += flat.size
    return MotionHistogram(
        bin_edges=tuple(edges.tolist()),
        counts=tuple(counts.tolist()),
        total=total,
        skipped_samples=skipped,
    )


def motion_histogram(m: DatasetManifest, base_dir: PathLike,
                     bin_edges: Optional[Sequence[float]] = None) -> MotionHistogram:
    """Histogram of flow-label magnitudes over every sample in the manifest.

    Unreadable samples are skipped and counted, not fatal.
    """
    from . import formats

    edges = list(bin_edges) if bin_edges is not None else default_bin_edges()
    base = Path(base_dir)
    mags = []
    skipped = 0
    for s in m.samples:
        try:
            flow = formats.read_flo(base / s.flow_path)
        except Exception:
            skipped += 1
            continue
        d = flow.data.astype(np.float64)
        mags.append(np.sqrt(d[:, :, 0] ** 2 + d[:, :, 1] ** 2))
    return histogram_from_magnitudes(mags, edges, skipped=skipped)


def write_histogram_csv(hist: MotionHistogram, path: PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_low", "bin_high", "count"])
        for low, high, count in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
            writer.writerow([f"{low:.6g}", f"{high:.6g}", count])


def plot_histogram(hist: MotionHistogram, path: PathLike, title: str = "Motion magnitude") -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    edges = np.asarray(hist.bin_edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    widths = np.diff(edges)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(centers, hist.counts, width=widths, align="center", edgecolor="none")
    ax.set_xscale("symlog", linthresh=0.1)
    ax.set_xlabel("flow magnitude (px)")
    ax.set_ylabel("pixel count")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
