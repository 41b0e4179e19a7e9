"""Per-action rewards for the multiset classification episodes."""

from __future__ import annotations

import numpy as np

from .multiset import LabelMultiset


def clf_reward(pred: int, available: LabelMultiset) -> tuple[int, LabelMultiset]:
    """+1 and remove one instance when the prediction is available, else -1.

    The returned multiset is a new object; the input is never mutated. The
    stop class is never in a label multiset, so sampling it early earns -1.
    """
    if available.contains(pred):
        return 1, available.remove_one(pred)
    return -1, available


def loc_reward(priority: np.ndarray, loc: tuple[int, int]) -> float:
    """Priority-map value at glimpse cell (x, y)."""
    p = np.asarray(priority, dtype=np.float64)
    x, y = int(loc[0]), int(loc[1])
    h, w = p.shape
    if not (0 <= x < w and 0 <= y < h):
        raise IndexError(f"loc_reward: location ({x}, {y}) outside {h}x{w} grid")
    return float(p[y, x])
