"""Mask overlays on video frames and J/F summary figures."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.figure import Figure
from PIL import Image

from refvos.dataset import ResultsLayout, find_frame, read_mask_png
from refvos.errors import RenderError
from refvos.masks import BinaryMask
from refvos.metrics import EvaluationReport

DEFAULT_COLOR = (255, 0, 0)


def blend(frame: np.ndarray, mask: BinaryMask, alpha: float = 0.5, color: Sequence[int] = DEFAULT_COLOR) -> np.ndarray:
    """Tint masked pixels of an RGB uint8 frame; unmasked pixels are untouched."""
    if not 0.0 <= alpha <= 1.0:
        raise RenderError(f"alpha must be in [0, 1], got {alpha}")
    if frame.shape[:2] != mask.shape:
        raise RenderError(f"frame is {frame.shape[:2]} but mask is {mask.shape}")
    out = frame.copy()
    sel = mask.bits
    mixed = (1.0 - alpha) * frame[sel].astype(np.float64) + alpha * np.asarray(color, dtype=np.float64)
    out[sel] = np.clip(np.rint(mixed), 0, 255).astype(np.uint8)
    return out


def render_overlays(
    results: ResultsLayout,
    frames_root: str | os.PathLike,
    out_dir: str | os.PathLike,
    alpha: float = 0.5,
    color: Sequence[int] = DEFAULT_COLOR,
) -> list[Path]:
    """One overlay PNG per result mask, mirrored under ``out_dir``."""
    frames_root, out_dir = Path(frames_root), Path(out_dir)
    written = []
    for mask_path in sorted(results.root.glob("*/*/*.png")):
        eid_dir = mask_path.parent
        vid = eid_dir.parent.name
        fid = mask_path.stem
        frame_path = find_frame(frames_root / vid, fid)
        if frame_path is None:
            raise RenderError(f"no frame image for {vid}/{fid} under {frames_root}")
        with Image.open(frame_path) as img:
            frame = np.asarray(img.convert("RGB"))
        overlay = blend(frame, read_mask_png(mask_path), alpha, color)
        dst = out_dir / vid / eid_dir.name / f"{fid}.png"
        dst.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(overlay).save(dst)
        written.append(dst)
    return written


def plot_scores(report: EvaluationReport, path: str | os.PathLike) -> Path:
    """Grouped J/F bars per sequence with the global J&F as a dashed line."""
    path = Path(path)
    n = len(report.rows)
    labels = [f"{r.video_id}/{r.expression_id}" for r in report.rows]
    x = np.arange(n)
    fig = Figure(figsize=(max(4.0, 0.35 * n + 2.0), 3.2))
    ax = fig.add_subplot(1, 1, 1)
    ax.bar(x - 0.2, [r.score.j_mean for r in report.rows], width=0.4, label="J", color="#1b1f8a")
    ax.bar(x + 0.2, [r.score.f_mean for r in report.rows], width=0.4, label="F", color="#1f8a1b")
    ax.axhline(report.global_score.jf, color="#8a1b1f", ls="--", lw=1,
               label=f"J&F = {report.global_score.jf:.3f} ({report.aggregation})")
    ax.set_ylim(0, 1.05)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=90, fontsize=6)
    ax.set_ylabel("score")
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata={"Software": None})
    return path
