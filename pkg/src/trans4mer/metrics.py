"""Boundary-detection metrics: AP, AUC-ROC, F1 and scene mIoU."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0/1")
    return s, y


def average_precision(scores, labels) -> float:
    """Step-interpolated AP; rank by descending score, ties by original index."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive label")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(s) + 1)
    return float(precision[hits == 1].sum() / n_pos)


def auc_roc(scores, labels) -> float:
    """Area under the ROC curve as the normalized Mann-Whitney U (ties count 1/2)."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def f1_at(scores, labels, threshold: float = 0.5) -> float:
    s, y = _as_arrays(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return f1_from_counts(tp, fp, fn)


def best_f1(scores, labels) -> tuple[float, float]:
    """Best F1 over all thresholds at observed scores; returns (f1, threshold)."""
    s, _ = _as_arrays(scores, labels)
    best = (0.0, 0.5)
    for thr in np.unique(s):
        f = f1_at(scores, labels, thr)
        if f > best[0]:
            best = (f, float(thr))
    return best


# -- scene partitions ---------------------------------------------------------------

@dataclass(frozen=True)
class ScenePartition:
    """Scenes over ``n_shots`` shots; ``boundaries`` are indices of scene-final shots."""

    boundaries: tuple[int, ...]
    n_shots: int

    def scenes(self) -> list[tuple[int, int]]:
        """Inclusive (start, end) shot intervals."""
        if self.n_shots < 1:
            raise ValueError("empty partition")
        ends = sorted({b for b in self.boundaries if 0 <= b < self.n_shots - 1})
        ends.append(self.n_shots - 1)
        out, start = [], 0
        for e in ends:
            out.append((start, e))
            start = e + 1
        return out

    @classmethod
    def from_labels(cls, labels) -> ScenePartition:
        labels = np.asarray(labels)
        return cls(tuple(int(i) for i in np.flatnonzero(labels)), len(labels))

    @classmethod
    def from_probs(cls, probs, threshold: float = 0.5) -> ScenePartition:
        probs = np.asarray(probs)
        return cls.from_labels(probs >= threshold)


def _iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if inter <= 0:
        return 0.0
    union = max(a[1], b[1]) - min(a[0], b[0]) + 1
    return inter / union


def _directional(src: list, dst: list) -> float:
    return float(np.mean([max(_iou(a, b) for b in dst) for a in src]))


def miou_boundaries(pred: ScenePartition, true: ScenePartition, symmetric: bool = True) -> float:
    """Mean best-match IoU of ground-truth scenes against predicted scenes.

    With ``symmetric`` the predicted-to-truth direction is averaged in.
    """
    if pred.n_shots != true.n_shots:
        raise ValueError("partitions cover different shot counts")
    ps, ts = pred.scenes(), true.scenes()
    forward = _directional(ts, ps)
    if not symmetric:
        return forward
    return 0.5 * (forward + _directional(ps, ts))


@dataclass
class EvalReport:
    ap: float
    miou: float
    auc_roc: float
    f1: float
    threshold_used: float
    n_windows: int
    best_f1: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


def evaluate_scores(probs, labels, clip_ids=None, window_ids=None,
                    threshold: float = 0.5, symmetric_miou: bool = True) -> EvalReport:
    """All four metrics from per-window centre probabilities.

    mIoU is computed per clip (windows ordered by ``window_id``) and averaged.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(probs)
    if n == 0:
        raise ValueError("no windows to evaluate")
    clip_ids = np.zeros(n, dtype=np.int64) if clip_ids is None else np.asarray(clip_ids)
    window_ids = np.arange(n) if window_ids is None else np.asarray(window_ids)
    mious = []
    for cid in np.unique(clip_ids):
        sel = np.flatnonzero(clip_ids == cid)
        sel = sel[np.argsort(window_ids[sel], kind="stable")]
        mious.append(miou_boundaries(ScenePartition.from_probs(probs[sel], threshold),
                                     ScenePartition.from_labels(labels[sel]), symmetric_miou))
    bf1, _ = best_f1(probs, labels)
    return EvalReport(
        ap=average_precision(probs, labels),
        miou=float(np.mean(mious)),
        auc_roc=auc_roc(probs, labels),
        f1=f1_at(probs, labels, threshold),
        threshold_used=threshold,
        n_windows=n,
        best_f1=bf1,
    )
