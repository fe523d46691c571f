"""Binary masks, mask sequences, confidence series and vote grids.

Masks are stored as read-only ``bool`` numpy arrays in row-major order with the
origin at the top-left pixel, so ``mask.bits[y, x]`` matches image row order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from refvos.errors import ConfigError, ConsistencyError, InputError, ShapeError

__all__ = [
    "BinaryMask",
    "MaskSequence",
    "ConfidenceSeries",
    "VoteGrid",
    "pixel_count",
    "intersection_count",
    "union_count",
    "accumulate",
    "threshold",
    "frame_sort_key",
]


class BinaryMask:
    """Immutable H x W foreground indicator."""

    __slots__ = ("_bits",)

    def __init__(self, bits):
        arr = np.asarray(bits)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ShapeError(f"mask must be a non-empty 2-D grid, got shape {arr.shape}")
        if arr.dtype != np.bool_:
            if not np.isin(arr, (0, 1)).all():
                raise ValueError("mask pixels must be 0 or 1; use BinaryMask.from_nonzero for label images")
            arr = arr.astype(bool)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        self._bits = arr

    @classmethod
    def from_nonzero(cls, values) -> BinaryMask:
        """Foreground wherever ``values`` is nonzero."""
        return cls(np.asarray(values) != 0)

    @classmethod
    def zeros(cls, height: int, width: int) -> BinaryMask:
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def ones(cls, height: int, width: int) -> BinaryMask:
        return cls(np.ones((height, width), dtype=bool))

    @property
    def bits(self) -> np.ndarray:
        return self._bits

    @property
    def height(self) -> int:
        return self._bits.shape[0]

    @property
    def width(self) -> int:
        return self._bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._bits.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._bits, other._bits))

    def __hash__(self) -> int:
        return hash((self.shape, np.packbits(self._bits).tobytes()))

    def __repr__(self) -> str:
        return f"BinaryMask({self.height}x{self.width}, fg={pixel_count(self)})"


def _same_shape(a: BinaryMask, b: BinaryMask) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")


def pixel_count(m: BinaryMask) -> int:
    return int(np.count_nonzero(m.bits))


def intersection_count(a: BinaryMask, b: BinaryMask) -> int:
    _same_shape(a, b)
    return int(np.count_nonzero(a.bits & b.bits))


def union_count(a: BinaryMask, b: BinaryMask) -> int:
    _same_shape(a, b)
    return int(np.count_nonzero(a.bits | b.bits))


_DIGITS = re.compile(r"(\d+)")


def frame_sort_key(frame_id: str) -> tuple:
    """Natural ordering key, so ``"9" < "10"`` and zero-padded ids sort as usual."""
    parts = _DIGITS.split(frame_id)
    return tuple((0, int(p), p) if p.isdigit() else (1, 0, p) for p in parts if p)


def check_frame_ids(frame_ids: Sequence[str]) -> None:
    if len(set(frame_ids)) != len(frame_ids):
        raise ConsistencyError("frame ids must be unique")
    keys = [frame_sort_key(f) for f in frame_ids]
    if any(k0 >= k1 for k0, k1 in zip(keys, keys[1:])):
        raise ConsistencyError(f"frame ids must be strictly ordered: {list(frame_ids)}")


@dataclass(frozen=True)
class MaskSequence:
    """T aligned masks for one (video, expression) unit."""

    frames: tuple[BinaryMask, ...]
    frame_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "frame_ids", tuple(str(f) for f in self.frame_ids))
        if not self.frames:
            raise InputError("a mask sequence needs at least one frame")
        if len(self.frames) != len(self.frame_ids):
            raise ConsistencyError(
                f"{len(self.frames)} masks but {len(self.frame_ids)} frame ids"
            )
        shape = self.frames[0].shape
        for fid, m in zip(self.frame_ids, self.frames):
            if m.shape != shape:
                raise ShapeError(f"frame {fid} has shape {m.shape}, expected {shape}")
        check_frame_ids(self.frame_ids)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames[0].shape

    def stack(self) -> np.ndarray:
        """(T, H, W) boolean copy of all frames."""
        return np.stack([m.bits for m in self.frames])

    @classmethod
    def broadcast(cls, mask: BinaryMask, frame_ids: Iterable[str]) -> MaskSequence:
        ids = tuple(frame_ids)
        return cls(tuple(mask for _ in ids), ids)


@dataclass(frozen=True)
class ConfidenceSeries:
    scores: tuple[float, ...]

    def __post_init__(self):
        scores = tuple(float(s) for s in self.scores)
        for i, s in enumerate(scores):
            if not 0.0 <= s <= 1.0:
                raise InputError(f"confidence {s!r} at position {i} is outside [0, 1]")
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.scores)


@dataclass
class VoteGrid:
    """Per-pixel vote counter; ``n`` is the number of masks accumulated so far."""

    height: int
    width: int
    counts: np.ndarray = field(default=None, repr=False)
    n: int = 0

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.height, self.width), dtype=np.int32)
        elif self.counts.shape != (self.height, self.width):
            raise ShapeError(f"counts shape {self.counts.shape} != {(self.height, self.width)}")

    @classmethod
    def like(cls, m: BinaryMask) -> VoteGrid:
        return cls(m.height, m.width)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


def accumulate(grid: VoteGrid, m: BinaryMask) -> VoteGrid:
    """Add one vote wherever ``m`` is foreground. Mutates and returns ``grid``."""
    if grid.shape != m.shape:
        raise ShapeError(f"grid shape {grid.shape} vs mask shape {m.shape}")
    grid.counts += m.bits
    grid.n += 1
    return grid


def threshold(grid: VoteGrid, thr: int) -> BinaryMask:
    """Foreground where at least ``thr`` votes were cast."""
    if isinstance(thr, bool) or int(thr) != thr or thr < 1:
        raise ConfigError(f"vote threshold must be a positive integer, got {thr!r}")
    return BinaryMask(grid.counts >= int(thr))
