"""Model assembly: build, persist, and train the learnable pieces from a config."""

from __future__ import annotations

import numpy as np

from .calibration import ScoreCalibrator, nearest_tracklet_iou
from .config import RunConfig
from .geometry import iou_3d
from .gnn import GNNParams
from .graph import PruningConfig
from .numerics import (assign_weights, load_weights, make_optimizer,
                       rng_stream, save_weights)
from .synth import SequenceBundle
from .tracker import (Tracker, Transition, teacher_tracklet, train_tracking,
                      transition_loss)

# rng stream ids: keep init draws independent of data-generation streams
_GNN_STREAM = 10
_CALIB_STREAM = 11


def prune_config(cfg: RunConfig) -> PruningConfig:
    return PruningConfig(cfg.spatial_prune_dist, cfg.temporal_prune_dist)


def create_gnn(cfg: RunConfig, seed: int | None = None) -> GNNParams:
    rng = rng_stream(cfg.seed if seed is None else seed, _GNN_STREAM)
    return GNNParams.create(cfg.feature_dim, cfg.gnn_iterations,
                            head_hidden=cfg.affinity_hidden,
                            combine=cfg.affinity_combine,
                            gated=cfg.gated_attention,
                            tied=cfg.tied_weights, rng=rng)


def create_calibrator(cfg: RunConfig, seed: int | None = None) -> ScoreCalibrator:
    rng = rng_stream(cfg.seed if seed is None else seed, _CALIB_STREAM)
    return ScoreCalibrator(cfg.feature_dim, hidden=cfg.calibration_hidden, rng=rng)


def create_tracker(cfg: RunConfig, params: GNNParams,
                   calibrator: ScoreCalibrator | None = None) -> Tracker:
    return Tracker(params, prune_config(cfg), gate=cfg.gate, max_age=cfg.max_age,
                   calibrator=calibrator, prune_enabled=cfg.prune_enabled)


def model_parameters(params: GNNParams,
                     calibrator: ScoreCalibrator | None = None) -> dict[str, np.ndarray]:
    named = params.named_parameters()
    if calibrator is not None:
        named.update(calibrator.named_parameters("calib"))
    return named


def save_model(path, params: GNNParams, calibrator: ScoreCalibrator | None = None) -> None:
    save_weights(path, model_parameters(params, calibrator))


def load_model(path, cfg: RunConfig):
    """Rebuild the model from config shapes and fill it from a weight file.

    Returns (gnn_params, calibrator); the calibrator is present only when the
    file carries calibration weights.
    """
    loaded = load_weights(path)
    params = create_gnn(cfg)
    has_calib = any(name.startswith("calib.") for name in loaded)
    calibrator = create_calibrator(cfg) if has_calib else None
    assign_weights(model_parameters(params, calibrator), loaded)
    return params, calibrator


# ---------------------------------------------------------------------------
# Training assembly
# ---------------------------------------------------------------------------

def bundle_transitions(bundle: SequenceBundle) -> list[Transition]:
    """Teacher-forced samples: ground truth of frame t-1 stands in for the tracklet."""
    transitions = []
    for t in range(1, bundle.num_frames):
        prev = bundle.gt[t - 1]
        tracklet = teacher_tracklet(prev.boxes, prev.ids, prev.features, t - 1)
        transitions.append(Transition(bundle.detections[t], tracklet,
                                      bundle.gt[t].boxes, bundle.gt[t].ids))
    return transitions


_AUGMENT_STREAM = 12


def train_on_bundle(bundle: SequenceBundle, cfg: RunConfig, params: GNNParams,
                    steps: int | None = None, callback=None) -> list[float]:
    transitions = bundle_transitions(bundle)
    optimizer = make_optimizer(cfg.optimizer, params.named_parameters(), cfg.learning_rate)
    return train_tracking(transitions, params, steps or cfg.train_steps, optimizer,
                          prune_config(cfg), prune_enabled=cfg.prune_enabled,
                          gt_iou_threshold=cfg.gt_iou_threshold,
                          augment_noise=cfg.augment_noise,
                          augment_rng=rng_stream(cfg.seed, _AUGMENT_STREAM),
                          callback=callback)


def bundle_tracking_loss(bundle: SequenceBundle, cfg: RunConfig,
                         params: GNNParams) -> float:
    """Mean clean (unaugmented) affinity MSE over the bundle's transitions."""
    transitions = bundle_transitions(bundle)
    if not transitions:
        return 0.0
    total = sum(transition_loss(tr, params, prune_config(cfg),
                                cfg.prune_enabled, cfg.gt_iou_threshold)
                for tr in transitions)
    return total / len(transitions)


def calibration_dataset(bundle: SequenceBundle, gt_iou_threshold: float = 0.5):
    """Candidates labeled by ground-truth overlap, with teacher-forced tracklet IoU.

    Returns (features, raw_scores, tracklet_ious, labels) over all frames;
    frame 0 sees an empty tracklet.
    """
    features, raws, ious, labels = [], [], [], []
    for t, det in enumerate(bundle.detections):
        track_boxes = bundle.gt[t - 1].boxes if t > 0 else []
        gt_boxes = bundle.gt[t].boxes
        for box, feat in zip(det.boxes, det.features):
            best = max((iou_3d(box, g) for g in gt_boxes), default=0.0)
            features.append(feat.vector)
            raws.append(box.score)
            ious.append(nearest_tracklet_iou(box, track_boxes))
            labels.append(1 if best > gt_iou_threshold else 0)
    return features, raws, ious, labels


def train_calibrator(calibrator: ScoreCalibrator, dataset, cfg: RunConfig,
                     steps: int | None = None) -> list[float]:
    features, raws, ious, labels = dataset
    optimizer = make_optimizer(cfg.optimizer, calibrator.named_parameters("calib"),
                               cfg.learning_rate)
    history = []
    for _ in range(steps or cfg.train_steps):
        loss, grads = calibrator.loss_and_grads(features, raws, ious, labels,
                                                cfg.focal_gamma, cfg.focal_alpha)
        optimizer.step(grads)
        history.append(loss)
    return history
