"""Keyframe selection: the most confident frame seeds propagation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from refvos.errors import InputError
from refvos.masks import ConfidenceSeries


@dataclass(frozen=True)
class KeyframeChoice:
    index: int
    score: float


def select_keyframe(p: ConfidenceSeries) -> KeyframeChoice:
    """Argmax over the scores; the lowest index wins ties."""
    if len(p) == 0:
        raise InputError("cannot select a keyframe from an empty confidence series")
    scores = np.asarray(p.scores, dtype=np.float64)
    # np.argmax returns the first occurrence of the maximum.
    idx = int(np.argmax(scores))
    return KeyframeChoice(idx, p.scores[idx])
