"""Command-line interface for the training-pair generation pipeline.

Exit codes: 0 success, 1 error (one-line diagnostic on stderr),
2 quality warning (outputs are still written).
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import em as em_mod
from . import formats, metrics
from .errors import CorpusEmpty, FlowforgeError, QualityReject
from .manifest import read_manifest
from .render import (
    HOLE_FILL_MODES,
    SPLAT_MODES,
    RenderConfig,
    make_rng,
    render_pair,
    sample_alpha,
)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_render_config(config_path, **overrides) -> RenderConfig:
    base = {}
    if config_path:
        base = json.loads(Path(config_path).read_text(encoding="utf-8"))
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    return RenderConfig.from_dict(base)


@click.group()
def main():
    """Generate optical-flow training pairs from real video frames."""


@main.command("render")
@click.option("--img1", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--img2", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--flow-fwd", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--flow-bwd", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--depth1", type=click.Path(exists=True, dir_okay=False))
@click.option("--depth2", type=click.Path(exists=True, dir_okay=False))
@click.option("--alpha", type=float, default=None,
              help="Fixed disturbance factor; omit to sample from --alpha-range.")
@click.option("--alpha-range", type=(float, float), default=None,
              help="Low/high bounds for the sampled disturbance factor.")
@click.option("--splat", "splat_mode", type=click.Choice(SPLAT_MODES), default="softmax",
              show_default=True)
@click.option("--hole-fill", "hole_fill_mode", type=click.Choice(HOLE_FILL_MODES),
              default="bhf", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=0,
              help="Worker bound; rendering one pair is single-threaded either way.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def cmd_render(img1, img2, flow_fwd, flow_bwd, depth1, depth2, alpha, alpha_range,
               splat_mode, hole_fill_mode, seed, workers, out_dir):
    """Render one training pair and write image2_new.png, flow_label.flo,
    mask.png and sample.json into OUT-DIR."""
    try:
        cfg_kwargs = dict(splat_mode=splat_mode, hole_fill_mode=hole_fill_mode,
                          rng_seed=seed)
        if alpha_range is not None:
            cfg_kwargs["alpha_range"] = tuple(alpha_range)
        elif alpha is not None:
            cfg_kwargs["alpha_range"] = (alpha, alpha)
        cfg = RenderConfig(**cfg_kwargs)

        if splat_mode != "sum":
            missing = [name for name, val in (("--depth1", depth1), ("--depth2", depth2))
                       if val is None]
            if missing:
                _fail(f"splat mode {splat_mode!r} requires {' and '.join(missing)}")

        i1 = formats.read_image(img1)
        i2 = formats.read_image(img2)
        f12 = formats.read_flo(flow_fwd)
        f21 = formats.read_flo(flow_bwd)
        d1 = formats.read_pfm(depth1) if depth1 else None
        d2 = formats.read_pfm(depth2) if depth2 else None

        if alpha is not None and alpha_range is None:
            alpha_value = float(alpha)
        else:
            alpha_value = sample_alpha(cfg, make_rng(cfg))

        rejected = None
        try:
            pair = render_pair(i1, i2, f12, f21, d1, d2, cfg, alpha_value)
        except QualityReject as exc:
            pair = exc.pair
            rejected = exc

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        formats.write_image(pair.image2_new, out / "image2_new.png")
        formats.write_flo(pair.flow_label, out / "flow_label.flo")
        formats.write_mask(pair.mask, out / "mask.png")
        info = {
            "alpha": pair.alpha,
            "double_hole_fraction": pair.double_hole_fraction,
            "splat_mode": cfg.splat_mode,
            "hole_fill_mode": cfg.hole_fill_mode,
            "seed": seed,
            "inputs": {
                "img1": str(img1), "img2": str(img2),
                "flow_fwd": str(flow_fwd), "flow_bwd": str(flow_bwd),
                "depth1": str(depth1) if depth1 else None,
                "depth2": str(depth2) if depth2 else None,
            },
            "outputs": {
                "image2_new": "image2_new.png",
                "flow_label": "flow_label.flo",
                "mask": "mask.png",
            },
        }
        (out / "sample.json").write_text(
            json.dumps(info, sort_keys=True, indent=2) + "\n", encoding="utf-8")

        if rejected is not None:
            click.echo(f"warning: {rejected}", err=True)
            sys.exit(2)
    except FlowforgeError as exc:
        _fail(str(exc))
    except OSError as exc:
        _fail(str(exc))


@main.command("generate")
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--estimator-cmd", required=True)
@click.option("--depth-cmd", default=None)
@click.option("--checkpoint", default="", help="Value substituted for {ckpt} in templates.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON file with render settings (alpha_range, splat_mode, ...).")
@click.option("--splat", "splat_mode", type=click.Choice(SPLAT_MODES), default=None)
@click.option("--hole-fill", "hole_fill_mode", type=click.Choice(HOLE_FILL_MODES), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=0, show_default="available parallelism")
@click.option("--save-masks", is_flag=True, default=False)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def cmd_generate(corpus, estimator_cmd, depth_cmd, checkpoint, config_path,
                 splat_mode, hole_fill_mode, seed, workers, save_masks, out_dir):
    """Run the generation step once over a corpus and write a dataset + manifest."""
    try:
        render_cfg = _load_render_config(config_path, splat_mode=splat_mode,
                                         hole_fill_mode=hole_fill_mode, rng_seed=seed)
        cfg = em_mod.EmConfig(
            corpus_root=corpus,
            workdir=out_dir,
            estimator_cmd=estimator_cmd,
            depth_cmd=depth_cmd,
            trainer_cmd="true {manifest} {init_ckpt} {out_ckpt}",  # unused here
            init_checkpoint=checkpoint or "none",
            workers=workers,
            render=render_cfg,
            save_masks=save_masks,
        )
        manifest = em_mod.generate_dataset(cfg, out_dir, iteration=0, checkpoint=checkpoint)
        ok = len(manifest.samples)
        failed = len(manifest.failures)
        click.echo(f"generated {ok} samples, {failed} failures -> {out_dir}/manifest.json")
        for f in manifest.failures:
            click.echo(f"  failed {f.source_video_id}/{f.source_frame_index} "
                       f"[{f.stage}]: {f.message}", err=True)
    except (CorpusEmpty, FlowforgeError, ValueError, OSError) as exc:
        _fail(str(exc))


@main.command("em")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON file mirroring the loop config fields.")
@click.option("--iterations", type=int, default=None, help="Override the config value.")
@click.option("--workers", type=int, default=None, help="Override the config value.")
def cmd_em(config_path, iterations, workers):
    """Run the full generate/train loop described by a JSON config, resumably."""
    try:
        raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        if iterations is not None:
            raw["iterations"] = iterations
        if workers is not None:
            raw["workers"] = workers
        cfg = em_mod.EmConfig.from_dict(raw)
        state = em_mod.run(cfg)
        click.echo(f"completed {state.iteration} iterations; "
                   f"checkpoint: {state.checkpoint_path}")
        if state.metrics_history:
            click.echo(f"{'iter':>4}  {'metric':<20} value")
            for it, name, value in state.metrics_history:
                click.echo(f"{it:>4}  {name:<20} {value:.6g}")
    except (FlowforgeError, ValueError, OSError) as exc:
        _fail(str(exc))


def _collect_flo_pairs(pred_dir: Path, gt_dir: Path):
    preds = sorted(p for p in pred_dir.iterdir() if p.suffix == ".flo")
    if not preds:
        _fail(f"no .flo files under {pred_dir}")
    pairs = []
    for p in preds:
        gt = gt_dir / p.name
        if not gt.is_file():
            _fail(f"no ground-truth match for {p.name} under {gt_dir}")
        pairs.append((p, gt))
    return pairs


@main.command("eval")
@click.option("--pred-dir", type=click.Path(exists=True, file_okay=False))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              help="Evaluate the manifest's flow labels instead of a directory.")
@click.option("--gt-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out-json", type=click.Path(dir_okay=False), default=None)
def cmd_eval(pred_dir, manifest_path, gt_dir, out_json):
    """Compare predicted flows against ground truth by matching file names."""
    try:
        if (pred_dir is None) == (manifest_path is None):
            _fail("pass exactly one of --pred-dir or --manifest")
        gt_root = Path(gt_dir)
        if pred_dir is not None:
            pairs = _collect_flo_pairs(Path(pred_dir), gt_root)
        else:
            m = read_manifest(manifest_path)
            base = Path(manifest_path).parent
            pairs = []
            for s in m.samples:
                pred = base / s.flow_path
                gt = gt_root / Path(s.flow_path).name
                if not gt.is_file():
                    _fail(f"no ground-truth match for {Path(s.flow_path).name} under {gt_dir}")
                pairs.append((pred, gt))
            if not pairs:
                _fail("manifest lists no samples")

        errors = []
        mags = []
        count = 0
        for pred_path, gt_path in pairs:
            pred = formats.read_flo(pred_path)
            gt = formats.read_flo(gt_path)
            if (pred.height, pred.width) != (gt.height, gt.width):
                _fail(f"{pred_path.name}: dimensions {pred.height}x{pred.width} "
                      f"!= ground truth {gt.height}x{gt.width}")
            diff = pred.data.astype(np.float64) - gt.data.astype(np.float64)
            errors.append(np.sqrt((diff ** 2).sum(axis=2)).ravel())
            gtm = np.sqrt((gt.data.astype(np.float64) ** 2).sum(axis=2)).ravel()
            mags.append(gtm)
            count += gtm.size
        err = np.concatenate(errors)
        mag = np.concatenate(mags)
        outlier = (err > metrics.F1_ABS_THRESHOLD) & (err > metrics.F1_REL_THRESHOLD * mag)
        report = {
            "epe": float(err.mean()),
            "f1": float(np.count_nonzero(outlier) / err.size),
            "valid_count": count,
        }
        text = json.dumps(report, sort_keys=True, indent=2)
        click.echo(text)
        if out_json:
            Path(out_json).write_text(text + "\n", encoding="utf-8")
    except FlowforgeError as exc:
        _fail(str(exc))
    except OSError as exc:
        _fail(str(exc))


@main.command("stats")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out-csv", required=True, type=click.Path(dir_okay=False))
@click.option("--out-plot", type=click.Path(dir_okay=False), default=None)
def cmd_stats(manifest_path, out_csv, out_plot):
    """Histogram the flow-label magnitudes of a generated dataset."""
    try:
        m = read_manifest(manifest_path)
        hist = metrics.motion_histogram(m, Path(manifest_path).parent)
        metrics.write_histogram_csv(hist, out_csv)
        if out_plot:
            metrics.plot_histogram(hist, out_plot)
        click.echo(f"{hist.total} pixels in {len(m.samples)} samples "
                   f"({hist.skipped_samples} skipped) -> {out_csv}")
    except (FlowforgeError, ValueError, OSError) as exc:
        _fail(str(exc))


if __name__ == "__main__":
    main()
