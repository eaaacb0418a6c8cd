"""Tracklet-aware detection score calibration and instance-feature aggregation.

A candidate's confidence is recomputed by a small feedforward net fed with
its pooled feature, the raw score, and the best BEV overlap against the
tracked boxes from the previous frame; nearby tracked objects raise the
likelihood that a candidate is real. Instance features from adjacent frames
are merged with a cosine-similarity weight. Also hosts the detection loss
pieces (focal + smoothed L1) with their analytic derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .geometry import Box3D, iou_bev, to_bev
from .numerics import MLP, global_avg_pool
from .state import InstanceFeature, feature_vector

SCORE_CLAMP = 1e-7


@dataclass
class ScoredCandidate:
    """Detection candidate before/after score calibration."""

    box: Box3D
    raw_score: float
    tracklet_iou: float = 0.0
    adjusted_score: float | None = None
    pooled_feature: np.ndarray | None = None


def nearest_tracklet_iou(box: Box3D, tracklet_boxes: Iterable[Box3D]) -> float:
    """Highest BEV IoU between a box and any tracked box; 0 when none overlap."""
    bev = to_bev(box)
    best = 0.0
    for tb in tracklet_boxes:
        best = max(best, iou_bev(bev, to_bev(tb)))
    return best


def _pooled(feat) -> np.ndarray:
    v = feat.vector if isinstance(feat, InstanceFeature) else np.asarray(feat, dtype=float)
    if v.ndim == 3:
        v = global_avg_pool(v)
    if v.ndim != 1:
        raise ValueError(f"expected vector or (C, X, Y) map, got shape {v.shape}")
    return v


def cosine_weight(g_t, g_prev) -> float:
    """Cosine similarity of two instance features, pooling map-shaped inputs first."""
    u = _pooled(g_t)
    v = _pooled(g_prev)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine weight undefined for zero-norm features")
    return float(np.dot(u, v) / (nu * nv))


def aggregate_instance(g_t, g_prev) -> np.ndarray:
    """Blend adjacent-frame instance features: g_t + w(g_t, g_prev) * g_prev.

    The weight is computed on pooled features; the blend itself applies to
    the full (vector- or map-shaped) features.
    """
    w = cosine_weight(g_t, g_prev)
    a = g_t.vector if isinstance(g_t, InstanceFeature) else np.asarray(g_t, dtype=float)
    b = g_prev.vector if isinstance(g_prev, InstanceFeature) else np.asarray(g_prev, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + w * b


class ScoreCalibrator:
    """Feedforward net mapping (pooled feature, raw score, tracklet IoU) to a score.

    The output replaces the raw score rather than adding to it. Applied
    identically to objectness and classification confidences.
    """

    def __init__(self, feature_dim: int, hidden: tuple[int, ...] = (64, 64),
                 rng: np.random.Generator | None = None):
        widths = [feature_dim + 2, *hidden, 1]
        acts = ["relu"] * len(hidden) + ["sigmoid"]
        if rng is None:
            self.mlp = MLP([np.zeros((widths[i + 1], widths[i])) for i in range(len(widths) - 1)],
                           [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)],
                           acts)
        else:
            self.mlp = MLP.create(widths, acts, rng)
        self.feature_dim = feature_dim

    def _stack(self, features, raw_scores, ious) -> np.ndarray:
        feats = np.stack([_pooled(f) for f in features])
        if feats.shape[1] != self.feature_dim:
            raise ValueError(f"feature width {feats.shape[1]} != calibrator width {self.feature_dim}")
        cols = np.column_stack([feats, np.asarray(raw_scores, dtype=float),
                                np.asarray(ious, dtype=float)])
        return cols

    def adjust(self, feature, raw_score: float, tracklet_iou: float) -> float:
        return float(self.adjust_batch([feature], [raw_score], [tracklet_iou])[0])

    def adjust_batch(self, features, raw_scores, ious) -> np.ndarray:
        x = self._stack(features, raw_scores, ious)
        return self.mlp.forward(x)[:, 0]

    def loss_and_grads(self, features, raw_scores, ious, labels,
                       gamma: float = 2.0, alpha: float = 0.25,
                       prefix: str = "calib"):
        """Mean focal loss over a candidate batch plus parameter gradients.

        Gradient keys match named_parameters(prefix).
        """
        x = self._stack(features, raw_scores, ious)
        p, cache = self.mlp.forward_with_cache(x)
        p = p[:, 0]
        labels = np.asarray(labels)
        n = len(labels)
        loss = sum(focal_loss(p[i], labels[i], gamma, alpha) for i in range(n)) / n
        dp = np.array([focal_loss_grad(p[i], labels[i], gamma, alpha) for i in range(n)]) / n
        _, grads = self.mlp.backward(cache, dp[:, None])
        named = {}
        for i, (dw, db) in enumerate(grads):
            named[f"{prefix}.fc{i}.weight"] = dw
            named[f"{prefix}.fc{i}.bias"] = db
        return loss, named

    def named_parameters(self, prefix: str = "calib") -> dict[str, np.ndarray]:
        return self.mlp.named_parameters(prefix)


def calibrate_score(feature, raw_score: float, tracklet_iou: float,
                    calibrator: ScoreCalibrator) -> float:
    return calibrator.adjust(feature, raw_score, tracklet_iou)


# ---------------------------------------------------------------------------
# Detection loss components
# ---------------------------------------------------------------------------

def _clamp_p(p: float) -> float:
    return min(max(float(p), SCORE_CLAMP), 1.0 - SCORE_CLAMP)


def focal_loss(p: float, y: int, gamma: float = 2.0, alpha: float = 0.25) -> float:
    """-alpha * (1 - p_t)^gamma * log(p_t), p_t = p for y=1 else 1-p."""
    p = _clamp_p(p)
    p_t = p if y == 1 else 1.0 - p
    return -alpha * (1.0 - p_t) ** gamma * math.log(p_t)


def focal_loss_grad(p: float, y: int, gamma: float = 2.0, alpha: float = 0.25) -> float:
    """dL/dp of focal_loss; zero outside the clamp range."""
    pf = float(p)
    if pf <= SCORE_CLAMP or pf >= 1.0 - SCORE_CLAMP:
        return 0.0
    if y == 1:
        q = 1.0 - pf
        grad_pt = -alpha * (q ** gamma / pf - (gamma * q ** (gamma - 1.0) * math.log(pf) if gamma != 0 else 0.0))
        return grad_pt
    # y = 0: L(p) = -alpha * p^gamma * log(1 - p)
    if gamma != 0:
        return -alpha * (gamma * pf ** (gamma - 1.0) * math.log(1.0 - pf) - pf ** gamma / (1.0 - pf))
    return alpha / (1.0 - pf)


def smooth_l1(pred, target) -> float:
    """Smoothed L1 with the quadratic/linear transition at 1.0; sums over elements."""
    delta = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    a = np.abs(delta)
    per = np.where(a < 1.0, 0.5 * delta * delta, a - 0.5)
    return float(np.sum(per))


def smooth_l1_grad(pred, target) -> np.ndarray:
    """d smooth_l1 / d pred, elementwise clip of the residual to [-1, 1]."""
    delta = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return np.clip(delta, -1.0, 1.0)
