"""Pseudo-boundary splitting and the pretraining / finetuning objectives."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class PseudoSplit:
    i_star: int
    left: tuple[int, ...]
    right: tuple[int, ...]

    @classmethod
    def at(cls, i_star: int, n: int) -> PseudoSplit:
        if not 0 <= i_star < n - 1:
            raise ValueError(f"split index {i_star} leaves an empty side for {n} shots")
        return cls(i_star, tuple(range(i_star + 1)), tuple(range(i_star + 1, n)))


def _unit(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(norm == 0, 1.0, norm)


def split_costs(feats) -> np.ndarray:
    """Within-segment cosine dissimilarity for every split point 0..N-2."""
    f = np.asarray(feats, dtype=np.float64)
    n = f.shape[0]
    u = _unit(f)
    costs = np.empty(n - 1)
    for i in range(n - 1):
        total = 0.0
        for seg in (u[: i + 1], u[i + 1:]):
            mu = _unit(seg.mean(axis=0))
            total += float(np.sum(1.0 - seg @ mu))
        costs[i] = total
    return costs


def pseudo_boundary(feats, tol: float = 1e-12) -> PseudoSplit:
    """Best two-segment split of a window's shot features.

    Every candidate split is scored, so the result is the exact optimum; ties
    (within ``tol``) go to the smallest index.
    """
    f = np.asarray(feats)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError("pseudo_boundary needs at least two shots")
    costs = split_costs(f)
    i_star = int(np.flatnonzero(costs <= costs.min() + tol)[0])
    return PseudoSplit.at(i_star, f.shape[0])


def similarity(x, y) -> float:
    """exp(cosine(x, y))."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ValueError("similarity is undefined for zero vectors")
    return math.exp(float(x @ y) / (nx * ny))


def _cos(a: Tensor, b: Tensor) -> Tensor:
    """Cosine between rows of ``a`` [M, D] and rows of ``b`` [Q, D] -> [M, Q]."""
    return T.matmul(T.normalize(a), T.swapaxes(T.normalize(b), 0, 1))


def shot_scene_term(r: Tensor, scene: Tensor, neg_shots: Tensor | None = None,
                    neg_scenes: Tensor | None = None) -> Tensor:
    """-log S(r, scene) / (S(r, scene) + sum S(r_n, scene) + sum S(r, scene_n))."""
    r2 = T.reshape(r, (1, -1))
    s2 = T.reshape(scene, (1, -1))
    pos = _cos(r2, s2)[0, 0]
    terms = [T.reshape(pos, (1,))]
    if neg_shots is not None and neg_shots.shape[0]:
        terms.append(T.reshape(_cos(neg_shots, s2), (-1,)))
    if neg_scenes is not None and neg_scenes.shape[0]:
        terms.append(T.reshape(_cos(r2, neg_scenes), (-1,)))
    logits = T.concat(terms, axis=0)
    # -log softmax of the positive entry; exp(cos) makes the cosines the logits
    mx = float(logits.data.max())
    lse = T.log(T.exp(logits - mx).sum()) + mx
    return lse - pos


def scene_means(reprs: Tensor, split: PseudoSplit) -> tuple[Tensor, Tensor]:
    if not split.left or not split.right:
        raise ValueError("both pseudo-scenes must be non-empty")
    left = reprs[list(split.left)].mean(axis=0)
    right = reprs[list(split.right)].mean(axis=0)
    return left, right


def contrastive_loss(reprs: Tensor, split: PseudoSplit, neg_shots: Tensor | None = None,
                     neg_scenes: Tensor | None = None) -> Tensor:
    """Shot-scene contrastive loss for one window.

    The window's first shot is contrasted with the left pseudo-scene and its last
    shot with the right one; negatives come from other windows.
    """
    left, right = scene_means(reprs, split)
    n = reprs.shape[0]
    return (shot_scene_term(reprs[0], left, neg_shots, neg_scenes)
            + shot_scene_term(reprs[n - 1], right, neg_shots, neg_scenes))


def batch_contrastive_loss(reprs: Tensor, splits: list[PseudoSplit]) -> Tensor:
    """Mean :func:`contrastive_loss` over a batch ``[B, N, D]``.

    Negatives for a window are the first/last shots and the two pseudo-scenes of
    every other window in the batch.
    """
    b, n, _ = reprs.shape
    if len(splits) != b:
        raise ValueError("one split per window required")
    left_w = np.zeros((b, n))
    right_w = np.zeros((b, n))
    for i, sp in enumerate(splits):
        if not sp.left or not sp.right:
            raise ValueError("both pseudo-scenes must be non-empty")
        left_w[i, list(sp.left)] = 1.0 / len(sp.left)
        right_w[i, list(sp.right)] = 1.0 / len(sp.right)
    weights = Tensor(np.stack([left_w, right_w], axis=1), dtype=reprs.dtype)  # [B, 2, N]
    scenes = T.reshape(T.matmul(weights, reprs), (2 * b, -1))
    anchors = T.reshape(T.concat([reprs[:, :1], reprs[:, n - 1:]], axis=1), (2 * b, -1))
    cos = _cos(anchors, scenes)  # [2B, 2B], row = shot, column = scene
    owner = np.repeat(np.arange(b), 2)
    other = Tensor((owner[:, None] != owner[None, :]).astype(reprs.dtype), dtype=reprs.dtype)
    e = T.exp(cos)
    pos = T.reshape(T.getitem(cos, (np.arange(2 * b), np.arange(2 * b))), (-1,))
    neg_shots = (e * other).sum(axis=0)
    neg_scenes = (e * other).sum(axis=1)
    denom = T.exp(pos) + neg_shots + neg_scenes
    per_term = T.log(denom) - pos
    return per_term.sum() * (1.0 / b)


def boundary_loss(logits: Tensor, split: PseudoSplit, nonboundary_idx: int) -> Tensor:
    """-log rho(i*) - log(1 - rho(b)) with rho = sigmoid of the boundary logit."""
    n = logits.shape[-1]
    if n < 2:
        raise ValueError("boundary loss needs at least two shots")
    if nonboundary_idx == split.i_star:
        raise ValueError("the non-boundary shot must differ from the pseudo-boundary")
    pos = logits[..., split.i_star]
    neg = logits[..., nonboundary_idx]
    return -(T.log_sigmoid(pos) + T.log_sigmoid(-neg))


def batch_boundary_loss(logits: Tensor, splits: list[PseudoSplit], rng: np.random.Generator) -> Tensor:
    """Mean :func:`boundary_loss` over ``[B, N]`` logits; non-boundary shots drawn uniformly."""
    b, n = logits.shape
    rows = np.arange(b)
    pos_idx = np.array([sp.i_star for sp in splits])
    neg_idx = np.empty(b, dtype=np.int64)
    for i, sp in enumerate(splits):
        choices = [j for j in range(n) if j != sp.i_star]
        neg_idx[i] = choices[int(rng.integers(len(choices)))]
    pos = T.getitem(logits, (rows, pos_idx))
    neg = T.getitem(logits, (rows, neg_idx))
    return -(T.log_sigmoid(pos) + T.log_sigmoid(-neg)).mean()


def finetune_loss(center_logits, labels, w_pos: float = 1.0) -> Tensor:
    """Binary cross-entropy on centre-shot logits, positives weighted by ``w_pos``."""
    logits = T.as_tensor(center_logits)
    y = np.asarray(labels, dtype=logits.dtype).reshape(logits.shape)
    pos_term = T.log_sigmoid(logits) * Tensor(w_pos * y, dtype=logits.dtype)
    neg_term = T.log_sigmoid(-logits) * Tensor(1.0 - y, dtype=logits.dtype)
    return -(pos_term + neg_term).mean()


def pretrain_objective(loss_contrastive: Tensor, loss_boundary: Tensor) -> Tensor:
    return loss_contrastive + loss_boundary
