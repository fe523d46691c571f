"""Segmenter and propagator backends.

External backends are separate processes that talk to the harness through two
directories. The harness fills ``{request_dir}`` with ``request.json``, the
video frames and (for propagation) ``key.png``; the process writes one
``<frame_id>.png`` per frame into ``{response_dir}``, plus ``scores.json`` when
acting as a segmenter. Built-in backends (``oracle``, ``identity``,
``translation``) implement the same contracts in-process.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from refvos.dataset import ExpressionRecord, ResultsLayout, VideoRecord, find_frame, read_mask_png, write_mask_png
from refvos.errors import BackendError, ConfigError, DecodeError, InputError, ProtocolError
from refvos.masks import BinaryMask, ConfidenceSeries, MaskSequence

logger = logging.getLogger(__name__)

BACKEND_KINDS = ("external-process", "oracle", "identity", "translation")
SEGMENTER_KINDS = ("external-process", "oracle")
PROPAGATOR_KINDS = ("external-process", "identity", "translation")


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    command_template: str = ""
    timeout: float = 600.0
    parameters: Mapping[str, Any] = field(default_factory=dict)
    env: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ConfigError(f"unknown backend kind {self.kind!r}; expected one of {BACKEND_KINDS}")
        if self.kind == "external-process" and not self.command_template.strip():
            raise ConfigError("external-process backends need a non-empty command_template")
        if self.timeout <= 0:
            raise ConfigError("backend timeout must be positive")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base_dir: Path | None = None) -> BackendDescriptor:
        d = dict(d)
        unknown = set(d) - {"kind", "command_template", "timeout", "parameters", "env"}
        if unknown:
            raise ConfigError(f"unknown backend fields: {sorted(unknown)}")
        if "kind" not in d:
            raise ConfigError("backend descriptor needs a 'kind'")
        params = dict(d.get("parameters") or {})
        if base_dir is not None:
            for key in ("masks_root", "scores_root"):
                if key in params:
                    params[key] = str((base_dir / params[key]).resolve())
        return cls(
            kind=d["kind"],
            command_template=d.get("command_template", ""),
            timeout=float(d.get("timeout", 600.0)),
            parameters=params,
            env={str(k): str(v) for k, v in (d.get("env") or {}).items()},
        )


@dataclass(frozen=True)
class SegmenterOutput:
    masks: MaskSequence
    confidences: ConfidenceSeries

    def __post_init__(self):
        if len(self.masks) != len(self.confidences):
            raise ProtocolError(
                f"{len(self.masks)} masks but {len(self.confidences)} confidences"
            )


@dataclass(frozen=True)
class PropagationRequest:
    key_mask: BinaryMask
    key_index: int
    frame_ids: tuple[str, ...]
    video_id: str = ""
    expression: str = ""

    def __post_init__(self):
        object.__setattr__(self, "frame_ids", tuple(self.frame_ids))
        if not 0 <= self.key_index < len(self.frame_ids):
            raise InputError(f"key_index {self.key_index} outside [0, {len(self.frame_ids)})")


# -- built-in backends ------------------------------------------------------


def read_scores(path: Path, n: int) -> ConfidenceSeries:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"{path}: unreadable scores ({exc})") from None
    if not isinstance(raw, list) or not all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in raw):
        raise ProtocolError(f"{path}: scores must be a JSON array of numbers")
    if len(raw) != n:
        raise ProtocolError(f"{path}: {len(raw)} scores for {n} frames")
    try:
        return ConfidenceSeries(tuple(raw))
    except InputError as exc:
        raise ProtocolError(f"{path}: {exc}") from None


def _oracle_segment(b: BackendDescriptor, video: VideoRecord, expr: ExpressionRecord) -> SegmenterOutput:
    if "masks_root" not in b.parameters:
        raise ConfigError("oracle backend needs parameters.masks_root")
    layout = ResultsLayout(Path(b.parameters["masks_root"]))
    frames = []
    for fid in video.frame_ids:
        p = layout.mask_path(video.video_id, expr.expression_id, fid)
        if not p.is_file():
            raise ProtocolError(f"oracle has no mask for {video.video_id}/{expr.expression_id} frame {fid}")
        frames.append(read_mask_png(p))
    seq = MaskSequence(tuple(frames), video.frame_ids)
    scores_root = Path(b.parameters.get("scores_root", layout.root))
    scores_path = scores_root / video.video_id / expr.expression_id / "scores.json"
    if scores_path.is_file():
        conf = read_scores(scores_path, len(seq))
    else:
        conf = ConfidenceSeries(tuple(1.0 for _ in video.frame_ids))
    return SegmenterOutput(seq, conf)


def shift_mask(m: BinaryMask, dx: int, dy: int) -> BinaryMask:
    """Translate by (dx, dy) pixels; content pushed past the border is dropped."""
    h, w = m.shape
    out = np.zeros((h, w), dtype=bool)
    if abs(dx) < w and abs(dy) < h:
        src = m.bits[max(0, -dy) : h - max(0, dy), max(0, -dx) : w - max(0, dx)]
        out[max(0, dy) : max(0, dy) + src.shape[0], max(0, dx) : max(0, dx) + src.shape[1]] = src
    return BinaryMask(out)


def _translation_propagate(b: BackendDescriptor, req: PropagationRequest) -> MaskSequence:
    try:
        dx = int(b.parameters.get("dx", 0))
        dy = int(b.parameters.get("dy", 0))
    except (TypeError, ValueError):
        raise ConfigError("translation backend needs integer dx/dy parameters") from None
    n = len(req.frame_ids)
    out: list[BinaryMask | None] = [None] * n
    out[req.key_index] = req.key_mask
    # forward pass
    for t in range(req.key_index + 1, n):
        out[t] = shift_mask(out[t - 1], dx, dy)
    # backward pass
    for t in range(req.key_index - 1, -1, -1):
        out[t] = shift_mask(out[t + 1], -dx, -dy)
    return MaskSequence(tuple(out), req.frame_ids)


# -- external process -------------------------------------------------------


def _backend_env(b: BackendDescriptor) -> dict[str, str]:
    env = {"PATH": os.environ.get("PATH", os.defpath)}
    if "SYSTEMROOT" in os.environ:
        env["SYSTEMROOT"] = os.environ["SYSTEMROOT"]
    env.update(b.env)
    return env


def _stage_frames(frames_dir: Path | None, frame_ids: Sequence[str], request_dir: Path) -> None:
    if frames_dir is None:
        return
    for fid in frame_ids:
        src = find_frame(frames_dir, fid)
        if src is None:
            raise InputError(f"frame {fid} not found in {frames_dir}")
        dst = request_dir / src.name
        try:
            os.link(src, dst)
        except OSError:
            shutil.copyfile(src, dst)


def _run_external(b: BackendDescriptor, request_dir: Path, response_dir: Path) -> None:
    cmd = b.command_template.format(
        request_dir=shlex.quote(str(request_dir)), response_dir=shlex.quote(str(response_dir))
    )
    argv = shlex.split(cmd)
    logger.debug("running backend: %s", cmd)
    try:
        proc = subprocess.run(
            argv, env=_backend_env(b), capture_output=True, text=True, timeout=b.timeout, check=False
        )
    except subprocess.TimeoutExpired as exc:
        raise BackendError(f"backend timed out after {b.timeout}s: {cmd}", _tail(exc.stderr)) from None
    except OSError as exc:
        raise BackendError(f"cannot start backend {argv[0]!r}: {exc}") from None
    if proc.returncode != 0:
        raise BackendError(f"backend exited with status {proc.returncode}: {cmd}", _tail(proc.stderr))


def _tail(text, limit: int = 4000) -> str:
    if text is None:
        return ""
    if isinstance(text, bytes):
        text = text.decode("utf-8", "replace")
    return text[-limit:]


def _read_response_masks(response_dir: Path, frame_ids: Sequence[str]) -> MaskSequence:
    frames = []
    for fid in frame_ids:
        p = response_dir / f"{fid}.png"
        if not p.is_file():
            raise ProtocolError(f"backend response is missing the mask for frame {fid}")
        try:
            frames.append(read_mask_png(p))
        except DecodeError as exc:
            raise ProtocolError(f"backend mask for frame {fid} is unreadable: {exc}") from None
    try:
        return MaskSequence(tuple(frames), tuple(frame_ids))
    except ValueError as exc:
        raise ProtocolError(f"backend masks are inconsistent: {exc}") from None


def _exchange(b: BackendDescriptor, payload: dict, frames_dir: Path | None, key_mask: BinaryMask | None):
    """Run one request/response round trip; yields the response dir inside a live temp dir."""
    tmp = tempfile.TemporaryDirectory(prefix="refvos-")
    root = Path(tmp.name)
    request_dir, response_dir = root / "request", root / "response"
    request_dir.mkdir()
    response_dir.mkdir()
    (request_dir / "request.json").write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")
    if key_mask is not None:
        write_mask_png(key_mask, request_dir / "key.png")
    _stage_frames(frames_dir, payload["frame_ids"], request_dir)
    _run_external(b, request_dir, response_dir)
    return tmp, response_dir


# -- public entry points ----------------------------------------------------


def run_segmenter(
    b: BackendDescriptor, video: VideoRecord, expr: ExpressionRecord, frames_dir: str | os.PathLike | None
) -> SegmenterOutput:
    """Per-frame masks and confidences for one referring expression."""
    if b.kind == "oracle":
        return _oracle_segment(b, video, expr)
    if b.kind != "external-process":
        raise ConfigError(f"backend kind {b.kind!r} cannot act as a segmenter")
    payload = {"video_id": video.video_id, "expression": expr.text, "frame_ids": list(video.frame_ids)}
    tmp, response_dir = _exchange(b, payload, None if frames_dir is None else Path(frames_dir), None)
    with tmp:
        masks = _read_response_masks(response_dir, video.frame_ids)
        scores_path = response_dir / "scores.json"
        if not scores_path.is_file():
            raise ProtocolError("backend response is missing scores.json")
        conf = read_scores(scores_path, len(masks))
    return SegmenterOutput(masks, conf)


def run_propagator(
    b: BackendDescriptor, req: PropagationRequest, frames_dir: str | os.PathLike | None
) -> MaskSequence:
    """Propagate ``req.key_mask`` to every frame and enforce the keyframe fixpoint."""
    if b.kind == "identity":
        out = MaskSequence.broadcast(req.key_mask, req.frame_ids)
    elif b.kind == "translation":
        out = _translation_propagate(b, req)
    elif b.kind == "external-process":
        payload = {
            "video_id": req.video_id,
            "expression": req.expression,
            "frame_ids": list(req.frame_ids),
            "key_index": req.key_index,
        }
        tmp, response_dir = _exchange(b, payload, None if frames_dir is None else Path(frames_dir), req.key_mask)
        with tmp:
            out = _read_response_masks(response_dir, req.frame_ids)
    else:
        raise ConfigError(f"backend kind {b.kind!r} cannot act as a propagator")
    if out.shape != req.key_mask.shape:
        raise ProtocolError(f"propagated masks have shape {out.shape}, key mask has {req.key_mask.shape}")
    if out.frames[req.key_index] != req.key_mask:
        raise ProtocolError(
            f"propagated mask at key frame {req.frame_ids[req.key_index]} differs from the key mask"
        )
    return out
