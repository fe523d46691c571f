"""Region similarity (J), contour accuracy (F) and J&F aggregation."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from refvos.dataset import ResultsLayout, VideoRecord, read_mask_png
from refvos.errors import ConfigError, EvaluationError, ShapeError
from refvos.masks import BinaryMask, intersection_count, union_count

AGGREGATIONS = ("sequence", "frame")


@dataclass(frozen=True)
class SequenceScore:
    j_mean: float
    f_mean: float

    @property
    def jf(self) -> float:
        return (self.j_mean + self.f_mean) / 2


@dataclass(frozen=True)
class BoundaryParams:
    """Boundary match tolerance as a fraction of the image diagonal."""

    tolerance_ratio: float = 0.008

    def __post_init__(self):
        if not self.tolerance_ratio >= 0:
            raise ConfigError(f"tolerance_ratio must be >= 0, got {self.tolerance_ratio!r}")

    def radius(self, height: int, width: int) -> int:
        # round half up; Python's round() would send 2.5 to 2
        return max(1, math.floor(self.tolerance_ratio * math.hypot(height, width) + 0.5))


def region_similarity(pred: BinaryMask, gt: BinaryMask) -> float:
    """IoU, with two empty masks scoring 1."""
    union = union_count(pred, gt)
    if union == 0:
        return 1.0
    return intersection_count(pred, gt) / union


def boundary_pixels(m: BinaryMask) -> BinaryMask:
    """Foreground pixels with a 4-neighbour that is background or off-image."""
    padded = np.pad(m.bits, 1, constant_values=False)
    interior = (
        padded[1:-1, 1:-1]
        & padded[:-2, 1:-1]
        & padded[2:, 1:-1]
        & padded[1:-1, :-2]
        & padded[1:-1, 2:]
    )
    return BinaryMask(m.bits & ~interior)


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= r * r


def contour_accuracy(pred: BinaryMask, gt: BinaryMask, p: BoundaryParams = BoundaryParams()) -> float:
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    pb = boundary_pixels(pred).bits
    gb = boundary_pixels(gt).bits
    n_pred, n_gt = int(pb.sum()), int(gb.sum())
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    se = disk(p.radius(*pred.shape))
    gt_zone = ndimage.binary_dilation(gb, structure=se)
    pred_zone = ndimage.binary_dilation(pb, structure=se)
    precision = np.count_nonzero(pb & gt_zone) / n_pred
    recall = np.count_nonzero(gb & pred_zone) / n_gt
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class SequenceReport:
    video_id: str
    expression_id: str
    score: SequenceScore
    frame_j: tuple[float, ...] = field(default=(), repr=False)
    frame_f: tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class EvaluationReport:
    rows: tuple[SequenceReport, ...]
    global_score: SequenceScore
    aggregation: str = "sequence"


def _score_sequence(
    results: ResultsLayout, gt: ResultsLayout, video: VideoRecord, expression_id: str, p: BoundaryParams
) -> SequenceReport:
    js, fs = [], []
    for fid in video.frame_ids:
        pred_m = read_mask_png(results.mask_path(video.video_id, expression_id, fid))
        gt_m = read_mask_png(gt.mask_path(video.video_id, expression_id, fid))
        js.append(region_similarity(pred_m, gt_m))
        fs.append(contour_accuracy(pred_m, gt_m, p))
    score = SequenceScore(float(np.mean(js)), float(np.mean(fs)))
    return SequenceReport(video.video_id, expression_id, score, tuple(js), tuple(fs))


def evaluate(
    results: ResultsLayout,
    ground_truth: ResultsLayout,
    meta: Sequence[VideoRecord],
    p: BoundaryParams = BoundaryParams(),
    aggregation: str = "sequence",
    workers: int = 1,
) -> EvaluationReport:
    """Score every (video, expression) in ``meta``.

    ``aggregation="sequence"`` averages per-sequence means; ``"frame"`` pools
    all frames of all sequences. Rows keep meta order either way.
    """
    if aggregation not in AGGREGATIONS:
        raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {aggregation!r}")
    missing = []
    for vid, eid, fid in results.triples(meta):
        for role, layout in (("prediction", results), ("ground truth", ground_truth)):
            if not layout.mask_path(vid, eid, fid).is_file():
                missing.append((role, vid, eid, fid))
    if missing:
        listing = "\n".join(f"  {role}: {v}/{e}/{f}" for role, v, e, f in missing)
        raise EvaluationError(f"{len(missing)} mask files are missing:\n{listing}", missing)

    units = [(v, e.expression_id) for v in meta for e in v.expressions]
    if workers > 1 and len(units) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda u: _score_sequence(results, ground_truth, u[0], u[1], p), units))
    else:
        rows = [_score_sequence(results, ground_truth, v, e, p) for v, e in units]

    if not rows:
        raise EvaluationError("nothing to evaluate: meta lists no expressions")
    if aggregation == "sequence":
        g = SequenceScore(
            float(np.mean([r.score.j_mean for r in rows])), float(np.mean([r.score.f_mean for r in rows]))
        )
    else:
        g = SequenceScore(
            float(np.mean([j for r in rows for j in r.frame_j])),
            float(np.mean([f for r in rows for f in r.frame_f])),
        )
    return EvaluationReport(tuple(rows), g, aggregation)


def write_report_csv(report: EvaluationReport, path: str | os.PathLike) -> None:
    """Columns video_id, expression_id, J, F, JF; last row is GLOBAL."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "expression_id", "J", "F", "JF"])
        for r in report.rows:
            w.writerow([r.video_id, r.expression_id, repr(r.score.j_mean), repr(r.score.f_mean), repr(r.score.jf)])
        g = report.global_score
        w.writerow(["GLOBAL", "", repr(g.j_mean), repr(g.f_mean), repr(g.jf)])
