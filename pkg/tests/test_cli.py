import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from flowforge import formats
from flowforge.cli import main
from flowforge.core import FlowField, ImageBuffer
from flowforge.manifest import read_manifest

SRC_DIR = Path(__file__).resolve().parent.parent / "src"


def run_cli(args, env_extra=None):
    """Invoke the CLI in a fresh interpreter (honest exit codes and bytes)."""
    env = dict(os.environ)
    env["PYTHONPATH"] = str(SRC_DIR) + os.pathsep + env.get("PYTHONPATH", "")
    if env_extra:
        env.update(env_extra)
    return subprocess.run([sys.executable, "-m", "flowforge", *args],
                          capture_output=True, text=True, env=env)


@pytest.fixture
def square_files(tmp_path, moving_square):
    s = moving_square
    paths = {
        "img1": tmp_path / "img1.png",
        "img2": tmp_path / "img2.png",
        "fwd": tmp_path / "fwd.flo",
        "bwd": tmp_path / "bwd.flo",
        "d1": tmp_path / "d1.pfm",
        "d2": tmp_path / "d2.pfm",
    }
    formats.write_image(s["i1"], paths["img1"])
    formats.write_image(s["i2"], paths["img2"])
    formats.write_flo(s["f12"], paths["fwd"])
    formats.write_flo(s["f21"], paths["bwd"])
    formats.write_pfm(s["d1"], paths["d1"])
    formats.write_pfm(s["d2"], paths["d2"])
    return paths


def render_args(paths, out_dir, *extra):
    return ["render",
            "--img1", str(paths["img1"]), "--img2", str(paths["img2"]),
            "--flow-fwd", str(paths["fwd"]), "--flow-bwd", str(paths["bwd"]),
            "--depth1", str(paths["d1"]), "--depth2", str(paths["d2"]),
            "--out-dir", str(out_dir), *extra]


class TestRender:
    def test_writes_expected_artifacts(self, square_files, tmp_path):
        out = tmp_path / "out"
        proc = run_cli(render_args(square_files, out, "--alpha", "1.0"))
        assert proc.returncode == 0, proc.stderr
        for name in ("image2_new.png", "flow_label.flo", "mask.png", "sample.json"):
            assert (out / name).is_file()
        info = json.loads((out / "sample.json").read_text())
        assert info["alpha"] == 1.0
        assert info["double_hole_fraction"] == 0.0

    def test_missing_depth_for_softmax_names_flag(self, square_files, tmp_path):
        args = ["render",
                "--img1", str(square_files["img1"]), "--img2", str(square_files["img2"]),
                "--flow-fwd", str(square_files["fwd"]), "--flow-bwd", str(square_files["bwd"]),
                "--splat", "softmax", "--out-dir", str(tmp_path / "o")]
        proc = run_cli(args)
        assert proc.returncode == 1
        assert "--depth1" in proc.stderr

    def test_max_mode_identity_inputs_reproduce_img1(self, tmp_path, moving_square):
        s = moving_square
        zero = FlowField(np.zeros((20, 20, 2), dtype=np.float32))
        paths = {
            "img1": tmp_path / "i.png", "img2": tmp_path / "i2.png",
            "fwd": tmp_path / "z1.flo", "bwd": tmp_path / "z2.flo",
            "d1": tmp_path / "d.pfm", "d2": tmp_path / "d2.pfm",
        }
        formats.write_image(s["i1"], paths["img1"])
        formats.write_image(s["i1"], paths["img2"])
        formats.write_flo(zero, paths["fwd"])
        formats.write_flo(zero, paths["bwd"])
        formats.write_pfm(s["d1"], paths["d1"])
        formats.write_pfm(s["d1"], paths["d2"])
        out = tmp_path / "out"
        proc = run_cli(render_args(paths, out, "--alpha", "1", "--splat", "max"))
        assert proc.returncode == 0, proc.stderr
        assert (out / "image2_new.png").read_bytes() == paths["img1"].read_bytes()

    def test_alpha_two_stays_under_default_budget(self, square_files, tmp_path):
        # alpha 2 vacates 18/400 = 4.5% of pixels as double holes
        out = tmp_path / "out"
        proc = run_cli(render_args(square_files, out, "--alpha", "2.0"))
        assert proc.returncode == 0, proc.stderr
        info = json.loads((out / "sample.json").read_text())
        assert info["double_hole_fraction"] == pytest.approx(18 / 400)

    def test_quality_reject_exits_2_with_files(self, tmp_path):
        # 8x8 square moving 4 px: at alpha 2 the two vacated regions
        # overlap on 32/400 = 8% of pixels, over the default 5% budget
        h = w = 20
        r0, c0, size, shift = 6, 2, 8, 4
        img1 = np.full((h, w, 1), 0.25, dtype=np.float32)
        img1[r0:r0 + size, c0:c0 + size] = 0.75
        img2 = np.full((h, w, 1), 0.25, dtype=np.float32)
        img2[r0:r0 + size, c0 + shift:c0 + shift + size] = 0.75
        fwd = np.zeros((h, w, 2), dtype=np.float32)
        fwd[r0:r0 + size, c0:c0 + size, 0] = shift
        bwd = np.zeros((h, w, 2), dtype=np.float32)
        bwd[r0:r0 + size, c0 + shift:c0 + shift + size, 0] = -shift
        depth1 = np.zeros((h, w), dtype=np.float32)
        depth1[r0:r0 + size, c0:c0 + size] = 20.0
        depth2 = np.zeros((h, w), dtype=np.float32)
        depth2[r0:r0 + size, c0 + shift:c0 + shift + size] = 20.0

        from flowforge.core import DepthMap, ImageBuffer as IB
        paths = {
            "img1": tmp_path / "a.png", "img2": tmp_path / "b.png",
            "fwd": tmp_path / "f.flo", "bwd": tmp_path / "g.flo",
            "d1": tmp_path / "d1.pfm", "d2": tmp_path / "d2.pfm",
        }
        formats.write_image(IB(img1), paths["img1"])
        formats.write_image(IB(img2), paths["img2"])
        formats.write_flo(FlowField(fwd), paths["fwd"])
        formats.write_flo(FlowField(bwd), paths["bwd"])
        formats.write_pfm(DepthMap(depth1), paths["d1"])
        formats.write_pfm(DepthMap(depth2), paths["d2"])

        out = tmp_path / "out"
        proc = run_cli(render_args(paths, out, "--alpha", "2.0"))
        assert proc.returncode == 2
        assert "double-hole" in proc.stderr
        for name in ("image2_new.png", "flow_label.flo", "mask.png", "sample.json"):
            assert (out / name).is_file()

    def test_unreadable_input_exits_1(self, square_files, tmp_path):
        bad = tmp_path / "bad.flo"
        bad.write_bytes(b"nope")
        args = render_args(dict(square_files, fwd=bad), tmp_path / "o", "--alpha", "1")
        proc = run_cli(args)
        assert proc.returncode == 1
        assert proc.stderr.strip()

    def test_deterministic_across_runs_and_workers(self, square_files, tmp_path):
        digests = []
        for i, workers in enumerate((1, 4, 1)):
            out = tmp_path / f"out{i}"
            proc = run_cli(render_args(square_files, out, "--alpha-range", "0", "2",
                                       "--seed", "123", "--workers", str(workers)))
            assert proc.returncode == 0, proc.stderr
            digests.append(tuple(
                (out / name).read_bytes()
                for name in ("image2_new.png", "flow_label.flo", "mask.png", "sample.json")
            ))
        assert digests[0] == digests[1] == digests[2]

    def test_help_lists_flags(self):
        runner = CliRunner()
        result = runner.invoke(main, ["render", "--help"])
        assert result.exit_code == 0
        for flag in ("--img1", "--flow-fwd", "--alpha-range", "--splat",
                     "--hole-fill", "--seed", "--out-dir"):
            assert flag in result.output


class TestGenerate:
    def test_stub_corpus_produces_manifest(self, stubs, tiny_corpus, tmp_path):
        out = tmp_path / "ds"
        proc = run_cli([
            "generate", "--corpus", str(tiny_corpus),
            "--estimator-cmd", stubs.flow_cmd(),
            "--depth-cmd", stubs.depth_cmd(),
            "--out", str(out), "--workers", "2", "--seed", "9",
        ])
        assert proc.returncode == 0, proc.stderr
        manifest = read_manifest(out / "manifest.json")
        assert len(manifest.samples) == 2
        assert manifest.em_iteration == 0

    def test_empty_corpus_exit_1(self, stubs, tmp_path):
        listing = tmp_path / "none.tsv"
        listing.write_text("")
        proc = run_cli([
            "generate", "--corpus", str(listing),
            "--estimator-cmd", stubs.flow_cmd(),
            "--depth-cmd", stubs.depth_cmd(),
            "--out", str(tmp_path / "ds"),
        ])
        assert proc.returncode == 1
        assert "pairs" in proc.stderr

    def test_failure_ledger_populated(self, stubs, tiny_corpus, tmp_path):
        out = tmp_path / "ds"
        proc = run_cli([
            "generate", "--corpus", str(tiny_corpus),
            "--estimator-cmd", stubs.flow_cmd_failing_on("v0_f0"),
            "--depth-cmd", stubs.depth_cmd(),
            "--out", str(out),
        ])
        assert proc.returncode == 0, proc.stderr
        manifest = read_manifest(out / "manifest.json")
        assert len(manifest.samples) == 1
        assert len(manifest.failures) == 1
        assert "failed" in proc.stderr


class TestEmCommand:
    def test_single_iteration_run(self, stubs, tiny_corpus, tmp_path):
        workdir = tmp_path / "w"
        workdir.mkdir()
        (workdir / "init.ckpt").write_bytes(b"t0")
        config = {
            "corpus_root": str(tiny_corpus),
            "workdir": str(workdir),
            "estimator_cmd": stubs.flow_cmd(),
            "depth_cmd": stubs.depth_cmd(),
            "trainer_cmd": stubs.trainer_cmd(),
            "init_checkpoint": str(workdir / "init.ckpt"),
            "iterations": 1,
            "workers": 1,
        }
        cfg_path = tmp_path / "em.json"
        cfg_path.write_text(json.dumps(config))
        proc = run_cli(["em", "--config", str(cfg_path)])
        assert proc.returncode == 0, proc.stderr
        assert "completed 1 iterations" in proc.stdout
        assert (workdir / "iter_001" / "checkpoint.ckpt").is_file()

    def test_resume_via_cli(self, stubs, tiny_corpus, tmp_path):
        workdir = tmp_path / "w"
        workdir.mkdir()
        (workdir / "init.ckpt").write_bytes(b"t0")
        config = {
            "corpus_root": str(tiny_corpus),
            "workdir": str(workdir),
            "estimator_cmd": stubs.flow_cmd(),
            "depth_cmd": stubs.depth_cmd(),
            "trainer_cmd": stubs.trainer_cmd_fail_once("iter_002"),
            "init_checkpoint": str(workdir / "init.ckpt"),
            "iterations": 2,
            "workers": 1,
        }
        cfg_path = tmp_path / "em.json"
        cfg_path.write_text(json.dumps(config))
        first = run_cli(["em", "--config", str(cfg_path)])
        assert first.returncode == 1
        flows = stubs.invocations("stub_flow.py", "flow")
        second = run_cli(["em", "--config", str(cfg_path)])
        assert second.returncode == 0, second.stderr
        assert stubs.invocations("stub_flow.py", "flow") == flows

    def test_bad_config_exit_1(self, tmp_path):
        cfg_path = tmp_path / "em.json"
        cfg_path.write_text(json.dumps({"workdir": "w"}))
        proc = run_cli(["em", "--config", str(cfg_path)])
        assert proc.returncode == 1


class TestEvalCommand:
    def test_identical_pred_gt_zero_epe(self, tmp_path):
        rng = np.random.default_rng(80)
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        flow = FlowField(rng.uniform(-4, 4, (5, 5, 2)).astype(np.float32))
        formats.write_flo(flow, pred_dir / "a.flo")
        formats.write_flo(flow, gt_dir / "a.flo")
        proc = run_cli(["eval", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir)])
        assert proc.returncode == 0, proc.stderr
        report = json.loads(proc.stdout)
        assert report["epe"] == 0.0
        assert report["f1"] == 0.0
        assert report["valid_count"] == 25

    def test_three_four_five_fixture(self, tmp_path):
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        pred = np.zeros((4, 4, 2), dtype=np.float32)
        pred[:, :, 0] = 3.0
        pred[:, :, 1] = 4.0
        formats.write_flo(FlowField(pred), pred_dir / "x.flo")
        formats.write_flo(FlowField(np.zeros((4, 4, 2), dtype=np.float32)),
                          gt_dir / "x.flo")
        proc = run_cli(["eval", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir)])
        report = json.loads(proc.stdout)
        assert report["epe"] == pytest.approx(5.0)

    def test_mismatched_pairs_exit_1(self, tmp_path):
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        formats.write_flo(FlowField(np.zeros((2, 2, 2), dtype=np.float32)),
                          pred_dir / "only_here.flo")
        proc = run_cli(["eval", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir)])
        assert proc.returncode == 1
        assert "only_here" in proc.stderr


class TestStatsCommand:
    def test_histogram_csv_matches_oracle(self, stubs, tiny_corpus, tmp_path):
        out = tmp_path / "ds"
        proc = run_cli([
            "generate", "--corpus", str(tiny_corpus),
            "--estimator-cmd", stubs.flow_cmd(),
            "--depth-cmd", stubs.depth_cmd(),
            "--out", str(out),
        ])
        assert proc.returncode == 0, proc.stderr
        csv_path = tmp_path / "hist.csv"
        plot_path = tmp_path / "hist.png"
        proc = run_cli(["stats", "--manifest", str(out / "manifest.json"),
                        "--out-csv", str(csv_path), "--out-plot", str(plot_path)])
        assert proc.returncode == 0, proc.stderr
        assert plot_path.is_file()
        rows = csv_path.read_text().strip().splitlines()
        counts = [int(r.rsplit(",", 1)[1]) for r in rows[1:]]
        # stub flows are all zero: every pixel is in the first bin
        assert counts[0] == 2 * 12 * 16
        assert sum(counts) == 2 * 12 * 16
