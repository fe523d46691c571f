from __future__ import annotations

import json
from pathlib import Path

from refvos.backends import BackendDescriptor
from refvos.dataset import ResultsLayout, write_mask_png
from refvos.masks import BinaryMask
from refvos.pipeline import PipelineConfig, SourceSpec


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def oracle_source(model_id: str, gt_root: Path) -> SourceSpec:
    return SourceSpec(model_id, "backend", BackendDescriptor("oracle", parameters={"masks_root": str(gt_root)}))


def config(sources, out: Path, propagator=None, **kw) -> PipelineConfig:
    if "reference_model" not in kw:
        kw["reference_model"] = sources[0].model_id
    return PipelineConfig(
        sources=tuple(sources),
        propagator=propagator or BackendDescriptor("identity"),
        output=ResultsLayout(out),
        **kw,
    )


def empty_source_dir(ds, root: Path, scores: list[float] | None = None) -> Path:
    layout = ResultsLayout(root)
    for v in ds.meta:
        h, w = ds.ground_truth.read_sequence(v.video_id, v.expressions[0].expression_id, v.frame_ids[:1]).shape
        for e in v.expressions:
            for fid in v.frame_ids:
                write_mask_png(BinaryMask.zeros(h, w), layout.mask_path(v.video_id, e.expression_id, fid))
            if scores is not None:
                (layout.sequence_dir(v.video_id, e.expression_id) / "scores.json").write_text(json.dumps(scores))
    return root


ACCEPTANCE_RESULTS: list[str] = []


class criterion:
    """Context manager recording one PASS/FAIL line per acceptance criterion."""

    def __init__(self, name: str):
        self.name = name
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        line = f"[{status}] {self.name}"
        if self.detail:
            line += f" -- {self.detail}"
        if exc_type is not None:
            line += f" ({exc_type.__name__}: {exc})".replace("\n", " ")[:300]
        ACCEPTANCE_RESULTS.append(line)
        print(line)
        return False
