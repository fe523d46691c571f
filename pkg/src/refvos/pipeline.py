"""End-to-end orchestration.

For every (video, target group) unit:

1. ``segment``   collect each source's masks and confidences per expression
2. ``fuse1``     pixel-vote the group's member sequences
3. ``keyframe``  argmax of the reference model's confidences
4. ``propagate`` push each variant's keyframe mask through the whole video
5. ``fuse2``     pixel-vote the propagated variants
6. ``write``     give every expression of the group the final masks

Units run in parallel; the run report is merged afterwards in unit order so
output is independent of scheduling.
"""

from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from refvos.backends import BackendDescriptor, PropagationRequest, read_scores, run_propagator, run_segmenter
from refvos.dataset import ExpressionRecord, ResultsLayout, VideoRecord, write_results
from refvos.errors import ConfigError, ProtocolError
from refvos.fusion import FusionConfig, fuse_group, fuse_sequences, group_by_target, group_key, ratio_to_threshold
from refvos.keyframe import select_keyframe
from refvos.masks import ConfidenceSeries, pixel_count
from refvos.metrics import BoundaryParams

logger = logging.getLogger(__name__)

STAGES = ("segment", "fuse1", "keyframe", "propagate", "fuse2", "write")
FUSED_VARIANT = "fused"


@dataclass(frozen=True)
class SourceSpec:
    model_id: str
    kind: str  # "backend" | "precomputed-dir"
    backend: BackendDescriptor | None = None
    path: Path | None = None

    def __post_init__(self):
        if self.kind == "backend" and self.backend is None:
            raise ConfigError(f"source {self.model_id!r}: kind 'backend' needs a backend descriptor")
        if self.kind == "precomputed-dir" and self.path is None:
            raise ConfigError(f"source {self.model_id!r}: kind 'precomputed-dir' needs a path")
        if self.kind not in ("backend", "precomputed-dir"):
            raise ConfigError(f"source {self.model_id!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class EnsembleConfig:
    """Second-stage vote over propagated variants.

    Each variant is either ``"fused"`` (the first-stage fusion) or a source
    model id, meaning that model's own masks are propagated separately.
    """

    variants: tuple[str, ...] = (FUSED_VARIANT,)
    thr_ratio: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(self.variants))
        if not self.variants:
            raise ConfigError("ensemble needs at least one variant")
        if len(set(self.variants)) != len(self.variants):
            raise ConfigError("ensemble variants must be unique")
        if not 0.0 < self.thr_ratio <= 1.0:
            raise ConfigError(f"ensemble thr_ratio must be in (0, 1], got {self.thr_ratio!r}")


@dataclass(frozen=True)
class PipelineConfig:
    sources: tuple[SourceSpec, ...]
    reference_model: str
    propagator: BackendDescriptor
    output: ResultsLayout
    fusion: FusionConfig = FusionConfig()
    ensemble: EnsembleConfig = EnsembleConfig()
    boundary: BoundaryParams = BoundaryParams()
    parallelism: int = 1
    keyframe_floor: float = 0.0
    report_timings: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise ConfigError("at least one source is required")
        ids = [s.model_id for s in self.sources]
        if len(set(ids)) != len(ids):
            raise ConfigError("source model ids must be unique")
        if self.reference_model not in ids:
            raise ConfigError(f"reference_model {self.reference_model!r} is not among the sources {ids}")
        for v in self.ensemble.variants:
            if v != FUSED_VARIANT and v not in ids:
                raise ConfigError(f"ensemble variant {v!r} is neither 'fused' nor a source model id")
        if isinstance(self.parallelism, bool) or int(self.parallelism) != self.parallelism or self.parallelism < 1:
            raise ConfigError(f"parallelism must be a positive integer, got {self.parallelism!r}")

    def source(self, model_id: str) -> SourceSpec:
        return next(s for s in self.sources if s.model_id == model_id)


def _config_from_dict(d: Mapping[str, Any], base_dir: Path) -> PipelineConfig:
    known = {
        "sources", "reference_model", "fusion", "ensemble", "propagator", "boundary",
        "parallelism", "output", "keyframe_floor", "report_timings",
    }
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("sources", "reference_model", "propagator"):
        if key not in d:
            raise ConfigError(f"config is missing {key!r}")
    sources = []
    for s in d["sources"]:
        kind = s.get("kind")
        if "model_id" not in s:
            raise ConfigError("every source needs a model_id")
        sources.append(
            SourceSpec(
                model_id=str(s["model_id"]),
                kind=kind,
                backend=BackendDescriptor.from_dict(s["backend"], base_dir) if "backend" in s else None,
                path=(base_dir / s["path"]).resolve() if "path" in s else None,
            )
        )
    ens = dict(d.get("ensemble") or {})
    return PipelineConfig(
        sources=tuple(sources),
        reference_model=str(d["reference_model"]),
        propagator=BackendDescriptor.from_dict(d["propagator"], base_dir),
        output=ResultsLayout((base_dir / d.get("output", "results")).resolve()),
        fusion=FusionConfig.from_dict(d.get("fusion")),
        ensemble=EnsembleConfig(
            variants=tuple(ens.get("variants", (FUSED_VARIANT,))), thr_ratio=float(ens.get("thr_ratio", 0.5))
        ),
        boundary=BoundaryParams(**(d.get("boundary") or {})),
        parallelism=d.get("parallelism", 1),
        keyframe_floor=float(d.get("keyframe_floor", 0.0)),
        report_timings=bool(d.get("report_timings", False)),
    )


def load_config(path: str | os.PathLike) -> PipelineConfig:
    """Read a JSON pipeline config; relative paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return _config_from_dict(doc, path.parent.resolve())


# -- run report -------------------------------------------------------------


@dataclass
class StageRecord:
    video_id: str
    group: str
    stage: str
    status: str = "ok"
    warnings: list[str] = field(default_factory=list)
    error: str | None = None
    elapsed_s: float | None = None

    def to_dict(self) -> dict:
        d = {
            "video_id": self.video_id,
            "group": self.group,
            "stage": self.stage,
            "status": self.status,
            "warnings": list(self.warnings),
        }
        if self.error is not None:
            d["error"] = self.error
        if self.elapsed_s is not None:
            d["elapsed_s"] = self.elapsed_s
        return d


@dataclass
class RunResult:
    layout: ResultsLayout
    records: list[StageRecord]
    failed_units: list[tuple[str, str]]

    @property
    def ok(self) -> bool:
        return not self.failed_units


def write_run_report(records: Sequence[StageRecord], path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


# -- unit execution ---------------------------------------------------------


def _precomputed_output(src: SourceSpec, video: VideoRecord, expr: ExpressionRecord, need_scores: bool):
    layout = ResultsLayout(src.path)
    for fid in video.frame_ids:
        if not layout.mask_path(video.video_id, expr.expression_id, fid).is_file():
            raise ProtocolError(
                f"source {src.model_id!r} has no mask for {video.video_id}/{expr.expression_id} frame {fid}"
            )
    masks = layout.read_sequence(video.video_id, expr.expression_id, video.frame_ids)
    scores_path = layout.sequence_dir(video.video_id, expr.expression_id) / "scores.json"
    if scores_path.is_file():
        conf = read_scores(scores_path, len(masks))
    elif need_scores:
        raise ProtocolError(
            f"reference source {src.model_id!r} lacks scores.json for {video.video_id}/{expr.expression_id}"
        )
    else:
        conf = ConfidenceSeries(tuple(1.0 for _ in video.frame_ids))
    return masks, conf


class _Unit:
    def __init__(self, cfg: PipelineConfig, video: VideoRecord, exprs: Sequence[ExpressionRecord], key: str, frames_root):
        self.cfg = cfg
        self.video = video
        self.exprs = tuple(exprs)
        self.key = key
        self.frames_dir = None if frames_root is None else Path(frames_root) / video.video_id
        self.records: list[StageRecord] = []

    def _stage(self, name: str, fn):
        rec = StageRecord(self.video.video_id, self.key, name)
        t0 = time.perf_counter()
        try:
            out = fn(rec)
        except Exception as exc:
            rec.status = "failed"
            rec.error = f"{type(exc).__name__}: {exc}"
            raise
        finally:
            if self.cfg.report_timings:
                rec.elapsed_s = round(time.perf_counter() - t0, 6)
            self.records.append(rec)
            for w in rec.warnings:
                logger.warning("%s/%s %s: %s", self.video.video_id, self.key, name, w)
        return out

    def run(self) -> bool:
        try:
            self._run()
            return True
        except Exception as exc:
            logger.error("unit %s/%s failed: %s", self.video.video_id, self.key, exc)
            return False

    def _segment(self, rec):
        records, confs = [], {}
        for src in self.cfg.sources:
            is_ref = src.model_id == self.cfg.reference_model
            for e in self.exprs:
                if src.kind == "backend":
                    out = run_segmenter(src.backend, self.video, e, self.frames_dir)
                    masks, conf = out.masks, out.confidences
                else:
                    masks, conf = _precomputed_output(src, self.video, e, need_scores=is_ref)
                records.append((src.model_id, e, masks))
                if is_ref:
                    confs[e.expression_id] = conf
        return records, confs

    def _run(self):
        cfg = self.cfg
        records, confs = self._stage("segment", self._segment)

        def fuse1(rec):
            (group,) = group_by_target(records)
            by_variant = {}
            for v in cfg.ensemble.variants:
                if v == FUSED_VARIANT:
                    by_variant[v] = fuse_group(group, cfg.fusion)
                else:
                    sub = [(m, e, s) for m, e, s in records if m == v]
                    (g,) = group_by_target(sub)
                    by_variant[v] = fuse_group(g, cfg.fusion)
            return by_variant

        fused = self._stage("fuse1", fuse1)

        def keyframe(rec):
            # mean over the group's expressions of the reference model's scores
            series = np.mean([confs[e.expression_id].scores for e in self.exprs], axis=0)
            choice = select_keyframe(ConfidenceSeries(tuple(float(s) for s in series)))
            if choice.score < cfg.keyframe_floor:
                rec.warnings.append(
                    f"keyframe score {choice.score:.4f} below floor {cfg.keyframe_floor:.4f}; using it anyway"
                )
            return choice

        choice = self._stage("keyframe", keyframe)

        def propagate(rec):
            out = {}
            text = " | ".join(e.text for e in self.exprs)
            for v, seq in fused.items():
                key_mask = seq.frames[choice.index]
                if pixel_count(key_mask) == 0:
                    rec.warnings.append(f"variant {v}: keyframe mask is empty; propagating empty masks")
                req = PropagationRequest(key_mask, choice.index, self.video.frame_ids, self.video.video_id, text)
                out[v] = run_propagator(cfg.propagator, req, self.frames_dir)
            return out

        propagated = self._stage("propagate", propagate)

        def fuse2(rec):
            members = [propagated[v] for v in cfg.ensemble.variants]
            return fuse_sequences(members, ratio_to_threshold(cfg.ensemble.thr_ratio, len(members)))

        final = self._stage("fuse2", fuse2)

        def write(rec):
            for e in self.exprs:
                write_results(cfg.output, self.video, e.expression_id, final)

        self._stage("write", write)


def plan_units(meta: Sequence[VideoRecord]) -> list[tuple[VideoRecord, str, list[ExpressionRecord]]]:
    units = []
    for v in meta:
        groups: dict[str, list[ExpressionRecord]] = {}
        for e in v.expressions:
            groups.setdefault(group_key(e), []).append(e)
        units.extend((v, k, exprs) for k, exprs in groups.items())
    return units


def run_pipeline(
    cfg: PipelineConfig, meta: Sequence[VideoRecord], frames_root: str | os.PathLike | None
) -> RunResult:
    units = [_Unit(cfg, v, exprs, key, frames_root) for v, key, exprs in plan_units(meta)]
    if cfg.parallelism > 1 and len(units) > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            ok = list(pool.map(lambda u: u.run(), units))
    else:
        ok = [u.run() for u in units]
    records = [r for u in units for r in u.records]
    failed = [(u.video.video_id, u.key) for u, good in zip(units, ok) if not good]
    return RunResult(cfg.output, records, failed)
