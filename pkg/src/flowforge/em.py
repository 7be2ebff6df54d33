"""Self-training loop: alternate dataset generation and external training.

The generation step runs an external flow estimator (twice per pair,
forward and backward) and an external depth estimator (once per frame)
over a corpus of real frame pairs, renders a training triplet from each,
and writes a manifest. The training step hands that manifest to an
external trainer command and adopts the checkpoint it produces. The
loop never looks inside a checkpoint; it only threads paths through
command templates, which keeps the estimator and trainer fully
swappable and the loop testable with stub scripts.

All state lives in workdir/state.json (written atomically), so an
interrupted run resumes at the last completed step without re-rendering
or re-training anything.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import formats
from .core import SampleRecord
from .errors import CorpusEmpty, EstimatorFailed, FlowforgeError, QualityReject, TrainerFailed
from .manifest import (
    CorpusPair,
    DatasetManifest,
    FailureRecord,
    read_corpus,
    read_manifest,
    verify_sample_files,
    write_manifest,
)
from .render import RenderConfig, render_pair, sample_alpha

log = logging.getLogger(__name__)

PathLike = Union[str, Path]

_REQUIRED_PLACEHOLDERS = {
    "estimator_cmd": ("{img1}", "{img2}", "{out_flow}"),
    "depth_cmd": ("{img}", "{out_pfm}"),
    "trainer_cmd": ("{manifest}", "{init_ckpt}", "{out_ckpt}"),
    "eval_cmd": ("{ckpt}", "{out_json}"),
}


def _mask_seed(seed: int) -> int:
    return seed & 0xFFFF_FFFF_FFFF_FFFF


@dataclass
class EmConfig:
    corpus_root: Path
    workdir: Path
    estimator_cmd: str
    trainer_cmd: str
    init_checkpoint: Path
    depth_cmd: Optional[str] = None
    eval_cmd: Optional[str] = None
    iterations: int = 4
    workers: int = 0
    render: RenderConfig = field(default_factory=RenderConfig)
    source_description: str = ""
    save_masks: bool = False

    def __post_init__(self):
        self.corpus_root = Path(self.corpus_root)
        self.workdir = Path(self.workdir)
        self.init_checkpoint = Path(self.init_checkpoint)
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")
        for name in ("estimator_cmd", "trainer_cmd", "depth_cmd", "eval_cmd"):
            template = getattr(self, name)
            if template is None:
                continue
            missing = [p for p in _REQUIRED_PLACEHOLDERS[name] if p not in template]
            if missing:
                raise ValueError(f"{name} template is missing placeholders {missing}")
        if self.render.splat_mode != "sum" and self.depth_cmd is None:
            raise ValueError(
                f"depth_cmd is required for splat mode {self.render.splat_mode!r}"
            )

    def to_dict(self) -> dict:
        return {
            "corpus_root": str(self.corpus_root),
            "workdir": str(self.workdir),
            "estimator_cmd": self.estimator_cmd,
            "depth_cmd": self.depth_cmd,
            "trainer_cmd": self.trainer_cmd,
            "eval_cmd": self.eval_cmd,
            "init_checkpoint": str(self.init_checkpoint),
            "iterations": self.iterations,
            "workers": self.workers,
            "render": self.render.to_dict(),
            "source_description": self.source_description,
            "save_masks": self.save_masks,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if isinstance(kwargs.get("render"), dict):
            kwargs["render"] = RenderConfig.from_dict(kwargs["render"])
        return cls(**kwargs)


@dataclass
class EmState:
    iteration: int = 0   # last iteration whose training step completed
    checkpoint_path: Optional[str] = None
    manifest_path: Optional[str] = None
    metrics_history: List[Tuple[int, str, float]] = field(default_factory=list)
    records: Dict[str, dict] = field(default_factory=dict)

    def record(self, t: int) -> dict:
        return self.records.setdefault(str(t), {})

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "checkpoint_path": self.checkpoint_path,
            "manifest_path": self.manifest_path,
            "metrics_history": [list(m) for m in self.metrics_history],
            "records": self.records,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmState":
        return cls(
            iteration=int(d.get("iteration", 0)),
            checkpoint_path=d.get("checkpoint_path"),
            manifest_path=d.get("manifest_path"),
            metrics_history=[(int(i), str(k), float(v)) for i, k, v in d.get("metrics_history", [])],
            records={str(k): dict(v) for k, v in d.get("records", {}).items()},
        )


def state_path(workdir: PathLike) -> Path:
    return Path(workdir) / "state.json"


def save_state(state: EmState, workdir: PathLike) -> None:
    path = state_path(workdir)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(state.to_dict(), sort_keys=True, indent=2) + "\n",
                   encoding="utf-8")
    os.replace(tmp, path)


def load_state(workdir: PathLike) -> EmState:
    path = state_path(workdir)
    if not path.is_file():
        return EmState()
    return EmState.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _format_cmd(template: str, mapping: dict) -> List[str]:
    return [token.format(**mapping) for token in shlex.split(template)]


def _run_cmd(template: str, mapping: dict, stage: str) -> None:
    args = _format_cmd(template, mapping)
    proc = subprocess.run(args, capture_output=True, text=True)
    if proc.returncode != 0:
        detail = proc.stderr.strip().splitlines()
        raise EstimatorFailed(
            f"{stage}: {' '.join(args)} exited {proc.returncode}"
            + (f" ({detail[-1]})" if detail else "")
        )


def _iter_dir(workdir: Path, t: int) -> Path:
    return workdir / f"iter_{t:03d}"


@dataclass
class _PairOutcome:
    index: int
    pair: CorpusPair
    sample: Optional[SampleRecord] = None
    failure: Optional[FailureRecord] = None


def _render_one(cfg: EmConfig, t: int, index: int, pair: CorpusPair,
                work: Path, samples: Path, checkpoint: str) -> _PairOutcome:
    """Estimate flows and depth for one pair, render, and write the sample files."""
    outcome = _PairOutcome(index=index, pair=pair)

    def fail(stage: str, message: str) -> _PairOutcome:
        outcome.failure = FailureRecord(
            source_video_id=pair.video_id,
            source_frame_index=pair.frame_index,
            stage=stage,
            message=message,
        )
        return outcome

    pair_work = work / f"pair_{index:06d}"
    pair_work.mkdir(parents=True, exist_ok=True)
    fwd = pair_work / "fwd.flo"
    bwd = pair_work / "bwd.flo"
    d1p = pair_work / "d1.pfm"
    d2p = pair_work / "d2.pfm"

    try:
        base = {"ckpt": checkpoint}
        _run_cmd(cfg.estimator_cmd,
                 {**base, "img1": str(pair.image1_path), "img2": str(pair.image2_path),
                  "out_flow": str(fwd)}, "flow_forward")
        _run_cmd(cfg.estimator_cmd,
                 {**base, "img1": str(pair.image2_path), "img2": str(pair.image1_path),
                  "out_flow": str(bwd)}, "flow_backward")
        if cfg.depth_cmd is not None:
            _run_cmd(cfg.depth_cmd, {**base, "img": str(pair.image1_path), "out_pfm": str(d1p)},
                     "depth1")
            _run_cmd(cfg.depth_cmd, {**base, "img": str(pair.image2_path), "out_pfm": str(d2p)},
                     "depth2")
    except EstimatorFailed as exc:
        return fail("estimator", str(exc))
    except KeyError as exc:
        return fail("estimator", f"unknown placeholder {exc} in command template")

    try:
        i1 = formats.read_image(pair.image1_path)
        i2 = formats.read_image(pair.image2_path)
        f12 = formats.read_flo(fwd)
        f21 = formats.read_flo(bwd)
        d1 = formats.read_pfm(d1p) if cfg.depth_cmd is not None else None
        d2 = formats.read_pfm(d2p) if cfg.depth_cmd is not None else None
    except Exception as exc:
        return fail("io", str(exc))

    rng = np.random.default_rng([_mask_seed(cfg.render.rng_seed), t, index])
    alpha = sample_alpha(cfg.render, rng)
    try:
        rendered = render_pair(i1, i2, f12, f21, d1, d2, cfg.render, alpha)
    except QualityReject as exc:
        return fail("quality_reject", str(exc))
    except Exception as exc:
        return fail("render", str(exc))

    stem = f"pair_{index:06d}"
    try:
        formats.write_image(rendered.image1, samples / f"{stem}_img1.png")
        formats.write_image(rendered.image2_new, samples / f"{stem}_img2.png")
        formats.write_flo(rendered.flow_label, samples / f"{stem}_flow.flo")
        mask_rel = None
        if cfg.save_masks:
            formats.write_mask(rendered.mask, samples / f"{stem}_mask.png")
            mask_rel = f"samples/{stem}_mask.png"
    except OSError as exc:
        return fail("io", str(exc))

    outcome.sample = SampleRecord(
        image1_path=f"samples/{stem}_img1.png",
        image2_path=f"samples/{stem}_img2.png",
        flow_path=f"samples/{stem}_flow.flo",
        alpha=rendered.alpha,
        source_video_id=pair.video_id,
        source_frame_index=pair.frame_index,
        em_iteration=t,
        mask_path=mask_rel,
        double_hole_fraction=rendered.double_hole_fraction,
    )
    return outcome


def generate_dataset(cfg: EmConfig, out_dir: PathLike, iteration: int,
                     checkpoint: str) -> DatasetManifest:
    """Render one training sample per corpus pair into out_dir.

    Per-pair faults (estimator failures, unreadable outputs, quality
    rejects) are recorded in the manifest's failure ledger, not raised.
    The manifest is written to out_dir/manifest.json with sample paths
    relative to out_dir.
    """
    pairs = read_corpus(cfg.corpus_root)
    if not pairs:
        raise CorpusEmpty(f"{cfg.corpus_root} lists no frame pairs")

    out_dir = Path(out_dir)
    work = out_dir / "work"
    samples = out_dir / "samples"
    samples.mkdir(parents=True, exist_ok=True)

    workers = cfg.workers or os.cpu_count() or 1
    if workers == 1:
        outcomes = [
            _render_one(cfg, iteration, i, p, work, samples, checkpoint)
            for i, p in enumerate(pairs)
        ]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_render_one, cfg, iteration, i, p, work, samples, checkpoint)
                for i, p in enumerate(pairs)
            ]
            outcomes = [f.result() for f in futures]

    m = DatasetManifest(
        em_iteration=iteration,
        source_description=cfg.source_description or str(cfg.corpus_root),
        alpha_range=cfg.render.alpha_range,
        splat_mode=cfg.render.splat_mode,
        hole_fill_mode=cfg.render.hole_fill_mode,
        samples=[o.sample for o in outcomes if o.sample is not None],
        failures=[o.failure for o in outcomes if o.failure is not None],
    )
    for o in outcomes:
        status = "ok" if o.sample else f"failed ({o.failure.stage})"
        log.info("pair %06d %s/%d: %s", o.index, o.pair.video_id, o.pair.frame_index, status)

    problems = verify_sample_files(m, out_dir)
    if problems:
        raise EstimatorFailed(f"generated samples failed verification: {problems[:3]}")
    write_manifest(m, out_dir / "manifest.json")
    return m


def e_step(cfg: EmConfig, state: EmState) -> DatasetManifest:
    """Generate the dataset for the next iteration with the current checkpoint."""
    t = state.iteration + 1
    checkpoint = state.checkpoint_path or str(cfg.init_checkpoint)
    return generate_dataset(cfg, _iter_dir(cfg.workdir, t), t, checkpoint)


def m_step(cfg: EmConfig, manifest: DatasetManifest, state: EmState) -> EmState:
    """Hand the manifest to the external trainer and adopt its checkpoint."""
    if not manifest.samples:
        raise TrainerFailed("manifest lists no samples to train on")
    t = manifest.em_iteration
    iter_dir = _iter_dir(cfg.workdir, t)
    init_ckpt = state.checkpoint_path or str(cfg.init_checkpoint)
    out_ckpt = iter_dir / "checkpoint.ckpt"
    args = _format_cmd(cfg.trainer_cmd, {
        "manifest": str(iter_dir / "manifest.json"),
        "init_ckpt": init_ckpt,
        "out_ckpt": str(out_ckpt),
    })
    proc = subprocess.run(args, capture_output=True, text=True)
    if proc.returncode != 0:
        raise TrainerFailed(f"trainer exited {proc.returncode}: {proc.stderr.strip()[-200:]}")
    if not out_ckpt.is_file():
        raise TrainerFailed(f"trainer produced no checkpoint at {out_ckpt}")

    state.iteration = t
    state.checkpoint_path = str(out_ckpt)
    state.manifest_path = str(iter_dir / "manifest.json")
    rec = state.record(t)
    rec["checkpoint"] = str(out_ckpt)
    save_state(state, cfg.workdir)
    return state


def _run_eval(cfg: EmConfig, state: EmState, t: int) -> None:
    out_json = _iter_dir(cfg.workdir, t) / "eval.json"
    args = _format_cmd(cfg.eval_cmd, {"ckpt": state.checkpoint_path, "out_json": str(out_json)})
    proc = subprocess.run(args, capture_output=True, text=True)
    if proc.returncode != 0:
        log.warning("eval command exited %d for iteration %d", proc.returncode, t)
        return
    try:
        values = json.loads(out_json.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        log.warning("eval output unreadable for iteration %d: %s", t, exc)
        return
    for name in sorted(values):
        state.metrics_history.append((t, str(name), float(values[name])))
    state.record(t)["evaluated"] = True
    save_state(state, cfg.workdir)


def run(cfg: EmConfig) -> EmState:
    """Alternate generation and training for the configured iteration count.

    Fully resumable: completed steps are detected from state.json plus the
    files on disk and are never re-executed, so re-running over a finished
    workdir performs zero external command invocations.
    """
    cfg.workdir.mkdir(parents=True, exist_ok=True)
    state = load_state(cfg.workdir)

    for t in range(1, cfg.iterations + 1):
        rec = state.record(t)
        manifest_file = Path(rec["manifest"]) if "manifest" in rec else None
        ckpt_file = Path(rec["checkpoint"]) if "checkpoint" in rec else None
        have_manifest = manifest_file is not None and manifest_file.is_file()
        have_ckpt = ckpt_file is not None and ckpt_file.is_file()

        manifest = None
        if not have_manifest:
            if state.iteration != t - 1:
                raise FlowforgeError(
                    f"workdir inconsistent: iteration {t} has no manifest but last "
                    f"completed training is {state.iteration}"
                )
            manifest = e_step(cfg, state)
            rec["manifest"] = str(_iter_dir(cfg.workdir, t) / "manifest.json")
            save_state(state, cfg.workdir)
        elif not have_ckpt:
            manifest = read_manifest(manifest_file)
            log.info("iteration %d: reusing manifest %s", t, manifest_file)

        if not have_ckpt:
            state = m_step(cfg, manifest, state)
        else:
            state.iteration = t
            state.checkpoint_path = str(ckpt_file)
            state.manifest_path = str(rec["manifest"])
            log.info("iteration %d: reusing checkpoint %s", t, ckpt_file)

        if cfg.eval_cmd is not None and not rec.get("evaluated"):
            _run_eval(cfg, state, t)
    save_state(state, cfg.workdir)
    return state
