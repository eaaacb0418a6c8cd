"""Finite-difference verification of every trainable parameter group.

Each check builds a small fixed scene, computes analytic gradients once, and
compares them against central differences of the full forward pass. Shared
by the CLI verb and the acceptance suite.
"""

from __future__ import annotations

import numpy as np

from . import gnn
from .calibration import ScoreCalibrator
from .geometry import Box3D
from .graph import PruningConfig, build_graph, prune
from .numerics import grad_check, rng_stream
from .state import DetectionSet, InstanceFeature, TrackEntry, Tracklet
from .temporal_fusion import FeatureMap, TemporalFusion
from .tracker import tracking_loss, tracking_loss_grad


def _toy_scene(rng: np.random.Generator, n_tracks: int = 3, n_dets: int = 2,
               dim: int = 8):
    """Small two-frame scene with all objects close enough to stay connected."""
    def box(x, y):
        return Box3D((x, y, 0.8), (4.0, 2.0, 1.6), 0.3, 0.9, 0)

    entries = []
    for i in range(n_tracks):
        feat = InstanceFeature(rng.normal(size=dim), source="tracklet",
                               object_index=i, timestamp=0)
        entries.append(TrackEntry(i, box(2.0 * i, 0.0), feat))
    tracklet = Tracklet(entries, frame_index=0)
    det_boxes = [box(2.0 * j + 0.5, 1.0) for j in range(n_dets)]
    det_feats = [InstanceFeature(rng.normal(size=dim), source="detection",
                                 object_index=j, timestamp=1)
                 for j in range(n_dets)]
    detections = DetectionSet(det_boxes, det_feats, frame_index=1)
    return detections, tracklet


def check_gnn_and_head(seed: int = 0, eps: float = 1e-5) -> float:
    """Max relative FD error over all message-passing and affinity-head params."""
    rng = rng_stream(seed, 100)
    detections, tracklet = _toy_scene(rng)
    graph = prune(build_graph(detections, tracklet), PruningConfig(15.0, 5.0))
    params = gnn.GNNParams.create(feature_dim=8, iterations=2, head_hidden=(12, 12),
                                  rng=rng_stream(seed, 101))
    target = rng.integers(0, 2, size=(graph.n_tracks, graph.n_dets)).astype(float)

    def loss() -> float:
        fwd = gnn.message_pass(graph, params)
        affinity, _ = gnn.affinity_forward(fwd.final, graph.n_tracks, graph.n_dets, params)
        return tracking_loss(affinity, target)

    fwd = gnn.message_pass(graph, params)
    affinity, cache = gnn.affinity_forward(fwd.final, graph.n_tracks, graph.n_dets, params)
    grads = gnn.backward(graph, params, fwd, cache, tracking_loss_grad(affinity, target))
    named = params.named_parameters()
    return grad_check(loss, list(named.values()), [grads[k] for k in named], eps)


def check_calibrator(seed: int = 0, eps: float = 1e-5) -> float:
    """Max relative FD error for the score-calibration net under focal loss."""
    rng = rng_stream(seed, 102)
    calib = ScoreCalibrator(feature_dim=6, hidden=(10, 10), rng=rng_stream(seed, 103))
    n = 8
    features = [rng.normal(size=6) for _ in range(n)]
    raws = rng.uniform(0.2, 0.8, size=n)
    ious = rng.uniform(0.0, 1.0, size=n)
    labels = rng.integers(0, 2, size=n)

    def loss() -> float:
        value, _ = calib.loss_and_grads(features, raws, ious, labels)
        return value

    _, grads = calib.loss_and_grads(features, raws, ious, labels)
    named = calib.named_parameters("calib")
    return grad_check(loss, list(named.values()), [grads[k] for k in named], eps)


def check_fusion(seed: int = 0, eps: float = 1e-5, depth: int = 1) -> float:
    """Max relative FD error for the temporal-blend conv weights under an MSE loss."""
    rng = rng_stream(seed, 104)
    channels, xs, ys = 2, 4, 4
    fusion = TemporalFusion(channels, depth=depth, hidden_channels=3,
                            rng=rng_stream(seed, 105))
    f_prev = FeatureMap(rng.normal(size=(channels, xs, ys)), timestamp=0)
    f_t = FeatureMap(rng.normal(size=(channels, xs, ys)), timestamp=1)
    target = rng.normal(size=(channels, xs, ys))

    def loss() -> float:
        out = fusion.aggregate(f_t, f_prev)
        return 0.5 * float(np.sum((out.data - target) ** 2))

    out, cache = fusion.aggregate_with_cache(f_t, f_prev)
    grads = fusion.backward(cache, out.data - target)
    params, analytic = [], []
    for (w, b), (dw, db) in zip(zip(fusion.conv_w, fusion.conv_b), grads):
        params.extend([w, b])
        analytic.extend([dw, db])
    return grad_check(loss, params, analytic, eps)


def run_all(seed: int = 0, eps: float = 1e-5) -> dict[str, float]:
    return {
        "gnn_and_affinity_head": check_gnn_and_head(seed, eps),
        "score_calibrator": check_calibrator(seed, eps),
        "temporal_fusion_conv": check_fusion(seed, eps),
        "temporal_fusion_conv_depth2": check_fusion(seed, eps, depth=2),
    }
