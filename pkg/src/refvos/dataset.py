"""Challenge metadata, PNG mask codec and the results directory layout."""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from refvos.errors import ConsistencyError, DecodeError, MetaParseError, SchemaError, WriteError
from refvos.masks import BinaryMask, MaskSequence, check_frame_ids

# Index 0 black, index 1 the usual DAVIS red. Only the indices matter for scoring.
DEFAULT_PALETTE: tuple[tuple[int, int, int], ...] = ((0, 0, 0), (128, 0, 0))

FRAME_EXTENSIONS = (".jpg", ".jpeg", ".png")


@dataclass(frozen=True)
class ExpressionRecord:
    expression_id: str
    text: str
    object_id: str | None = None


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    frame_ids: tuple[str, ...]
    expressions: tuple[ExpressionRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "frame_ids", tuple(self.frame_ids))
        object.__setattr__(self, "expressions", tuple(self.expressions))
        if not self.frame_ids:
            raise SchemaError(f"video {self.video_id!r} has no frames")
        try:
            check_frame_ids(self.frame_ids)
        except ConsistencyError as exc:
            raise SchemaError(f"video {self.video_id!r}: {exc}") from None
        ids = [e.expression_id for e in self.expressions]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"video {self.video_id!r} has duplicate expression ids")

    def expression(self, expression_id: str) -> ExpressionRecord:
        for e in self.expressions:
            if e.expression_id == expression_id:
                return e
        raise KeyError(f"{self.video_id}/{expression_id}")


def _parse_video(video_id: str, body) -> VideoRecord:
    if not isinstance(body, dict):
        raise MetaParseError(f"video {video_id!r}: expected an object")
    for key in ("frames", "expressions"):
        if key not in body:
            raise SchemaError(f"video {video_id!r}: missing required field {key!r}")
    frames = body["frames"]
    if not isinstance(frames, list) or not all(isinstance(f, str) for f in frames):
        raise MetaParseError(f"video {video_id!r}: 'frames' must be a list of strings")
    exprs_raw = body["expressions"]
    if not isinstance(exprs_raw, dict):
        raise MetaParseError(f"video {video_id!r}: 'expressions' must be an object")
    exprs = []
    for exp_id, exp in exprs_raw.items():
        if not isinstance(exp, dict):
            raise MetaParseError(f"video {video_id!r} expression {exp_id!r}: expected an object")
        if "exp" not in exp:
            raise SchemaError(f"video {video_id!r} expression {exp_id!r}: missing required field 'exp'")
        if not isinstance(exp["exp"], str):
            raise MetaParseError(f"video {video_id!r} expression {exp_id!r}: 'exp' must be a string")
        obj = exp.get("obj_id")
        exprs.append(ExpressionRecord(str(exp_id), exp["exp"], None if obj is None else str(obj)))
    return VideoRecord(video_id, tuple(frames), tuple(exprs))


def load_meta(path: str | os.PathLike) -> list[VideoRecord]:
    """Read a ``meta_expressions``-style JSON file into video records."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MetaParseError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or "videos" not in doc:
        raise SchemaError(f"{path}: missing top-level 'videos' map")
    videos = doc["videos"]
    if not isinstance(videos, dict):
        raise MetaParseError(f"{path}: 'videos' must be an object")
    return [_parse_video(str(vid), body) for vid, body in videos.items()]


def meta_to_dict(videos: Sequence[VideoRecord]) -> dict:
    out: dict = {"videos": {}}
    for v in videos:
        exprs = {}
        for e in v.expressions:
            exprs[e.expression_id] = {"exp": e.text}
            if e.object_id is not None:
                exprs[e.expression_id]["obj_id"] = e.object_id
        out["videos"][v.video_id] = {"expressions": exprs, "frames": list(v.frame_ids)}
    return out


def dump_meta(videos: Sequence[VideoRecord], path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(meta_to_dict(videos), indent=2, ensure_ascii=False), encoding="utf-8")


def read_mask_png(path: str | os.PathLike) -> BinaryMask:
    """Decode an 8-bit grayscale or palette PNG; any nonzero value is foreground."""
    try:
        with Image.open(path) as img:
            if img.mode not in ("L", "P", "1"):
                raise DecodeError(f"{path}: unsupported image mode {img.mode!r} (need 8-bit single channel or palette)")
            arr = np.asarray(img)
    except DecodeError:
        raise
    except (OSError, ValueError) as exc:
        raise DecodeError(f"{path}: cannot decode mask ({exc})") from None
    return BinaryMask.from_nonzero(arr)


def encode_mask_png(m: BinaryMask, palette: Sequence[Sequence[int]] = DEFAULT_PALETTE) -> bytes:
    img = Image.fromarray(m.bits.astype(np.uint8), mode="P")
    flat = [c for rgb in palette for c in rgb]
    img.putpalette(flat)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def write_mask_png(m: BinaryMask, path: str | os.PathLike, palette: Sequence[Sequence[int]] = DEFAULT_PALETTE) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_mask_png(m, palette))
    except OSError as exc:
        raise WriteError(f"cannot write mask to {path}: {exc}") from exc


def find_frame(frames_dir: str | os.PathLike, frame_id: str) -> Path | None:
    base = Path(frames_dir)
    for ext in FRAME_EXTENSIONS:
        p = base / f"{frame_id}{ext}"
        if p.is_file():
            return p
    return None


@dataclass(frozen=True)
class ResultsLayout:
    """``root/<video_id>/<expression_id>/<frame_id>.png``"""

    root: Path
    palette: tuple[tuple[int, int, int], ...] = field(default=DEFAULT_PALETTE)

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    def sequence_dir(self, video_id: str, expression_id: str) -> Path:
        return self.root / video_id / expression_id

    def mask_path(self, video_id: str, expression_id: str, frame_id: str) -> Path:
        return self.sequence_dir(video_id, expression_id) / f"{frame_id}.png"

    def triples(self, meta: Sequence[VideoRecord]) -> Iterator[tuple[str, str, str]]:
        for v in meta:
            for e in v.expressions:
                for fid in v.frame_ids:
                    yield v.video_id, e.expression_id, fid

    def read_sequence(self, video_id: str, expression_id: str, frame_ids: Sequence[str]) -> MaskSequence:
        frames = [read_mask_png(self.mask_path(video_id, expression_id, f)) for f in frame_ids]
        return MaskSequence(tuple(frames), tuple(frame_ids))


def write_results(layout: ResultsLayout, video: VideoRecord, expression_id: str, seq: MaskSequence) -> list[Path]:
    """Write one PNG per frame; overwriting is idempotent."""
    if tuple(seq.frame_ids) != tuple(video.frame_ids):
        raise ConsistencyError(
            f"{video.video_id}/{expression_id}: sequence frame ids do not match the video's frame list"
        )
    paths = []
    for fid, m in zip(seq.frame_ids, seq.frames):
        p = layout.mask_path(video.video_id, expression_id, fid)
        write_mask_png(m, p, layout.palette)
        paths.append(p)
    return paths
