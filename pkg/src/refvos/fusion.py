"""Grouping of same-target mask sequences and pixel-vote fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from refvos.dataset import ExpressionRecord
from refvos.errors import ConfigError, ConsistencyError, InputError
from refvos.masks import MaskSequence, VoteGrid, accumulate, threshold


@dataclass(frozen=True)
class FusionConfig:
    """Vote thresholds as fractions of the group size.

    ``thr_ratio`` applies to groups that hold several referring expressions;
    ``thr_s_ratio`` applies when the group has a single expression, whose votes
    then come only from the different models.
    """

    thr_ratio: float = 0.5
    thr_s_ratio: float = 0.5

    def __post_init__(self):
        for name in ("thr_ratio", "thr_s_ratio"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0.0 < v <= 1.0):
                raise ConfigError(f"{name} must be in (0, 1], got {v!r}")

    @classmethod
    def from_dict(cls, d: dict | None) -> FusionConfig:
        d = dict(d or {})
        unknown = set(d) - {"thr_ratio", "thr_s_ratio"}
        if unknown:
            raise ConfigError(f"unknown fusion options: {sorted(unknown)}")
        return cls(**d)


def ratio_to_threshold(ratio: float, n: int) -> int:
    """ceil(ratio * n) clamped to [1, n]."""
    if n < 1:
        raise InputError("cannot derive a threshold for an empty group")
    # Round off float noise first so 0.3 * 10 does not become 4.
    thr = math.ceil(round(ratio * n, 9))
    return min(max(thr, 1), n)


@dataclass(frozen=True)
class FusionGroup:
    key: str
    members: tuple[MaskSequence, ...]
    member_labels: tuple[str, ...]
    expression_ids: tuple[str, ...]

    def __post_init__(self):
        if not self.members:
            raise InputError(f"fusion group {self.key!r} is empty")
        if len(self.members) != len(self.member_labels):
            raise ConsistencyError("one label per member required")
        first = self.members[0]
        for label, m in zip(self.member_labels, self.members):
            if m.frame_ids != first.frame_ids:
                raise ConsistencyError(f"member {label} is not aligned on frame ids with {self.member_labels[0]}")
            if m.shape != first.shape:
                raise ConsistencyError(f"member {label} has shape {m.shape}, expected {first.shape}")

    @property
    def n(self) -> int:
        return len(self.members)

    def vote_threshold(self, cfg: FusionConfig) -> int:
        ratio = cfg.thr_s_ratio if len(self.expression_ids) <= 1 else cfg.thr_ratio
        return ratio_to_threshold(ratio, self.n)


def group_key(expr: ExpressionRecord) -> str:
    if expr.object_id is not None:
        return f"obj:{expr.object_id}"
    return f"exp:{expr.expression_id}"


def group_by_target(records: Iterable[tuple[str, ExpressionRecord, MaskSequence]]) -> list[FusionGroup]:
    """Group one video's records by annotated object.

    Expressions without an object id each form their own group, still pooling
    every model's output for that expression. Groups keep first-seen order.
    """
    buckets: dict[str, list] = {}
    for model_id, expr, seq in records:
        buckets.setdefault(group_key(expr), []).append((model_id, expr, seq))
    groups = []
    for key, items in buckets.items():
        exprs: list[str] = []
        for _, e, _ in items:
            if e.expression_id not in exprs:
                exprs.append(e.expression_id)
        groups.append(
            FusionGroup(
                key=key,
                members=tuple(s for _, _, s in items),
                member_labels=tuple(f"{m}/{e.expression_id}" for m, e, _ in items),
                expression_ids=tuple(exprs),
            )
        )
    return groups


def fuse_sequences(members: Sequence[MaskSequence], thr: int) -> MaskSequence:
    """Per frame, count foreground votes across members and keep pixels with >= thr."""
    first = members[0]
    frames = []
    for t in range(len(first)):
        grid = VoteGrid.like(first.frames[t])
        for seq in members:
            accumulate(grid, seq.frames[t])
        frames.append(threshold(grid, thr))
    return MaskSequence(tuple(frames), first.frame_ids)


def fuse_group(g: FusionGroup, cfg: FusionConfig) -> MaskSequence:
    return fuse_sequences(g.members, g.vote_threshold(cfg))
