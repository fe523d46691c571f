"""Small synthetic datasets with known ground truth, for tests and demos.

Each object is an axis-aligned rectangle moving at a constant velocity, so the
``translation`` propagator can reproduce the ground truth exactly from any
clean frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from refvos.dataset import ExpressionRecord, ResultsLayout, VideoRecord, dump_meta, write_mask_png
from refvos.masks import BinaryMask


@dataclass(frozen=True)
class SyntheticSpec:
    videos: int = 4
    frames: int = 8
    objects_per_video: int = 1
    expressions_per_object: int = 2
    height: int = 48
    width: int = 64
    velocity: tuple[int, int] = (1, 0)
    seed: int = 0


@dataclass(frozen=True)
class SyntheticDataset:
    root: Path
    meta: list[VideoRecord]
    meta_path: Path
    frames_root: Path
    ground_truth: ResultsLayout


def rect_mask(h: int, w: int, top: int, left: int, rh: int, rw: int) -> BinaryMask:
    arr = np.zeros((h, w), dtype=bool)
    arr[max(top, 0) : max(top + rh, 0), max(left, 0) : max(left + rw, 0)] = True
    return BinaryMask(arr)


def make_dataset(root: str | Path, spec: SyntheticSpec = SyntheticSpec()) -> SyntheticDataset:
    """Write meta, RGB frames and per-expression ground-truth masks under ``root``."""
    root = Path(root)
    rng = np.random.default_rng(spec.seed)
    dx, dy = spec.velocity
    frame_ids = tuple(f"{5 * t:05d}" for t in range(spec.frames))
    gt = ResultsLayout(root / "gt")
    meta = []
    for vi in range(spec.videos):
        vid = f"vid{vi:03d}"
        exprs, objects = [], []
        for oi in range(spec.objects_per_video):
            rh = int(rng.integers(spec.height // 6, spec.height // 3))
            rw = int(rng.integers(spec.width // 8, spec.width // 4))
            # keep the whole trajectory inside the frame
            travel_x, travel_y = dx * (spec.frames - 1), dy * (spec.frames - 1)
            left0 = int(rng.integers(max(0, -travel_x), spec.width - rw - max(0, travel_x)))
            top0 = int(rng.integers(max(0, -travel_y), spec.height - rh - max(0, travel_y)))
            objects.append((top0, left0, rh, rw))
            for k in range(spec.expressions_per_object):
                eid = str(len(exprs))
                exprs.append(ExpressionRecord(eid, f"object {oi} of {vid}, phrasing {k}", str(oi + 1)))
        video = VideoRecord(vid, frame_ids, tuple(exprs))
        meta.append(video)
        base_color = rng.integers(0, 80, size=3)
        for t, fid in enumerate(frame_ids):
            frame = np.empty((spec.height, spec.width, 3), dtype=np.uint8)
            frame[:] = base_color
            for e in exprs:
                top0, left0, rh, rw = objects[int(e.object_id) - 1]
                m = rect_mask(spec.height, spec.width, top0 + dy * t, left0 + dx * t, rh, rw)
                frame[m.bits] = (200, 180, 60)
                write_mask_png(m, gt.mask_path(vid, e.expression_id, fid))
            (root / "frames" / vid).mkdir(parents=True, exist_ok=True)
            Image.fromarray(frame).save(root / "frames" / vid / f"{fid}.png")
    meta_path = root / "meta_expressions.json"
    dump_meta(meta, meta_path)
    return SyntheticDataset(root, meta, meta_path, root / "frames", gt)


def corrupt_dataset(
    ds: SyntheticDataset,
    out_root: str | Path,
    flip_prob: float = 0.15,
    seed: int = 0,
) -> tuple[ResultsLayout, dict[tuple[str, str], int]]:
    """Copy the ground truth with random pixel flips on every frame but one clean keyframe.

    The clean frame gets confidence 0.95 and the corrupted ones lower scores,
    written to ``scores.json`` beside each sequence. Returns the layout and the
    keyframe index chosen for every (video, expression).
    """
    rng = np.random.default_rng(seed)
    layout = ResultsLayout(Path(out_root))
    keys = {}
    for v in ds.meta:
        k = int(rng.integers(0, len(v.frame_ids)))
        for e in v.expressions:
            keys[(v.video_id, e.expression_id)] = k
            scores = []
            gt_seq = ds.ground_truth.read_sequence(v.video_id, e.expression_id, v.frame_ids)
            for t, (fid, m) in enumerate(zip(v.frame_ids, gt_seq.frames)):
                if t == k:
                    out = m
                    scores.append(0.95)
                else:
                    flips = rng.random(m.shape) < flip_prob
                    out = BinaryMask(m.bits ^ flips)
                    scores.append(round(float(rng.uniform(0.1, 0.9)), 6))
                write_mask_png(out, layout.mask_path(v.video_id, e.expression_id, fid))
            (layout.sequence_dir(v.video_id, e.expression_id) / "scores.json").write_text(json.dumps(scores))
    return layout, keys
