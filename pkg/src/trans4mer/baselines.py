"""Reference scorers that need no training."""

from __future__ import annotations

import numpy as np

from .data import ShotWindow


def random_scores(n: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).random(n)


def nearest_centroid_scores(windows: list[ShotWindow]) -> np.ndarray:
    """Raw-pixel boundary score for each window's centre shot.

    Each shot is summarized by its mean frame. The score is how much closer the
    centre shot lies to the centroid of the shots before it than to the centroid
    of the shots after it.
    """
    out = np.empty(len(windows))
    for i, w in enumerate(windows):
        feats = w.frames.reshape(w.frames.shape[0], w.frames.shape[1], -1).mean(axis=1)
        m = feats.shape[0] // 2
        center = feats[m]
        left = feats[:m].mean(axis=0) if m > 0 else center
        right = feats[m + 1:].mean(axis=0) if m > 0 else center
        out[i] = np.linalg.norm(center - right) - np.linalg.norm(center - left)
    return out
