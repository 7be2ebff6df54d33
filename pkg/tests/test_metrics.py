import csv

import numpy as np
import pytest

from flowforge.core import CoverageMask, FlowField
from flowforge.errors import NoValidPixels
from flowforge.metrics import (
    MotionHistogram,
    default_bin_edges,
    epe,
    evaluate,
    f1_rate,
    histogram_from_magnitudes,
    write_histogram_csv,
)


def const_flow(h, w, u, v):
    data = np.empty((h, w, 2), dtype=np.float32)
    data[:, :, 0] = u
    data[:, :, 1] = v
    return FlowField(data)


class TestEpe:
    def test_identical_fields_zero(self):
        rng = np.random.default_rng(30)
        f = FlowField(rng.uniform(-9, 9, (5, 5, 2)).astype(np.float32))
        assert epe(f, f) == 0.0

    def test_three_four_five(self):
        pred = const_flow(4, 4, 3.0, 4.0)
        gt = const_flow(4, 4, 0.0, 0.0)
        assert epe(pred, gt) == pytest.approx(5.0)

    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(31)
        pred = FlowField(rng.uniform(-5, 5, (6, 7, 2)).astype(np.float32))
        gt = FlowField(rng.uniform(-5, 5, (6, 7, 2)).astype(np.float32))
        total = 0.0
        for y in range(6):
            for x in range(7):
                du = float(pred.data[y, x, 0]) - float(gt.data[y, x, 0])
                dv = float(pred.data[y, x, 1]) - float(gt.data[y, x, 1])
                total += (du * du + dv * dv) ** 0.5
        assert epe(pred, gt) == pytest.approx(total / 42.0, abs=1e-6)

    def test_valid_mask_restricts(self):
        pred = const_flow(2, 2, 1.0, 0.0)
        gt = const_flow(2, 2, 0.0, 0.0)
        mask = CoverageMask(np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32))
        assert epe(pred, gt, mask) == pytest.approx(1.0)
        with pytest.raises(NoValidPixels):
            epe(pred, gt, CoverageMask(np.zeros((2, 2), dtype=np.float32)))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(32)
        pred = rng.uniform(-5, 5, (4, 6, 2)).astype(np.float32)
        gt = rng.uniform(-5, 5, (4, 6, 2)).astype(np.float32)
        perm = rng.permutation(24)
        pred_p = pred.reshape(24, 2)[perm].reshape(4, 6, 2)
        gt_p = gt.reshape(24, 2)[perm].reshape(4, 6, 2)
        assert epe(FlowField(pred), FlowField(gt)) == pytest.approx(
            epe(FlowField(pred_p), FlowField(gt_p)), abs=1e-9)


class TestF1:
    def test_identical_fields_zero(self):
        f = const_flow(3, 3, 2.0, 2.0)
        assert f1_rate(f, f) == 0.0

    def test_error_five_on_magnitude_eight(self):
        # 5 > 3 px and 5 > 0.4 = 5% of 8: every pixel is an outlier
        gt = const_flow(3, 3, 8.0, 0.0)
        pred = const_flow(3, 3, 3.0, 0.0)
        assert f1_rate(pred, gt) == 1.0

    def test_error_below_three_px_gate(self):
        gt = const_flow(3, 3, 8.0, 0.0)
        pred = const_flow(3, 3, 8.0 - 2.9, 0.0)
        assert f1_rate(pred, gt) == 0.0

    def test_relative_gate(self):
        # error 4 > 3 px but 4 < 5% of 100: not an outlier
        gt = const_flow(2, 2, 100.0, 0.0)
        pred = const_flow(2, 2, 96.0, 0.0)
        assert f1_rate(pred, gt) == 0.0

    def test_monotone_under_radial_error_growth(self):
        rng = np.random.default_rng(33)
        gt = FlowField(rng.uniform(-20, 20, (8, 8, 2)).astype(np.float32))
        noise = rng.standard_normal((8, 8, 2)).astype(np.float32)
        rates = []
        for scale in (0.5, 2.0, 4.0, 8.0):
            pred = FlowField(gt.data + scale * noise)
            rates.append(f1_rate(pred, gt))
        assert all(a <= b + 1e-12 for a, b in zip(rates, rates[1:]))

    def test_evaluate_bundles_counts(self):
        pred = const_flow(4, 5, 3.0, 4.0)
        gt = const_flow(4, 5, 0.0, 0.0)
        m = evaluate(pred, gt)
        assert m.valid_count == 20
        assert m.epe == pytest.approx(5.0)
        assert m.f1 == 1.0  # 5 > 3 and gt magnitude is 0


class TestHistogram:
    def test_zero_flow_in_first_bin(self):
        hist = histogram_from_magnitudes([np.zeros((4, 4))], default_bin_edges())
        assert hist.counts[0] == 16
        assert sum(hist.counts) == hist.total == 16

    def test_uniform_magnitude_lands_in_bin(self):
        hist = histogram_from_magnitudes([np.full((2, 3), 7.0)], [0.0, 5.0, 10.0])
        assert hist.counts == (0, 6)

    def test_pooled_equals_concatenated(self):
        rng = np.random.default_rng(34)
        a = rng.uniform(0, 50, (5, 5))
        b = rng.uniform(0, 300, (3, 7))
        edges = default_bin_edges()
        pooled = histogram_from_magnitudes([a, b], edges)
        concat = histogram_from_magnitudes([np.concatenate([a.ravel(), b.ravel()])], edges)
        assert pooled.counts == concat.counts
        assert pooled.total == a.size + b.size

    def test_overflow_lands_in_last_bin(self):
        hist = histogram_from_magnitudes([np.full((2, 2), 1e6)], [0.0, 1.0, 2.0])
        assert hist.counts == (0, 4)
        assert hist.total == 4

    def test_rejects_unsorted_edges(self):
        with pytest.raises(ValueError):
            histogram_from_magnitudes([np.zeros(3)], [0.0, 2.0, 1.0])

    def test_csv_schema(self, tmp_path):
        hist = MotionHistogram(bin_edges=(0.0, 1.0, 4.0), counts=(3, 7), total=10)
        path = tmp_path / "h.csv"
        write_histogram_csv(hist, path)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["bin_low", "bin_high", "count"]
        assert rows[1] == ["0", "1", "3"]
        assert rows[2] == ["1", "4", "7"]
