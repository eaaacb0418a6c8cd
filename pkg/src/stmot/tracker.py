"""Per-frame association loop and teacher-forced training.

Each frame builds the two-frame association graph, prunes it, runs message
passing, scores every tracklet/detection pair, and solves the assignment on
the resulting affinity matrix with the Hungarian method. Track lifecycle is
deliberately simple: matched tracks carry their id forward, unmatched
detections are born as new tracks, unmatched tracks coast until they exceed
the miss budget. Ids are never reused within a sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import gnn
from .calibration import ScoreCalibrator, nearest_tracklet_iou
from .geometry import Box3D, iou_3d
from .graph import PruningConfig, STGraph, build_graph, prune
from .state import DetectionSet, InstanceFeature, TrackEntry, Tracklet


# ---------------------------------------------------------------------------
# Affinity matrix and assignment
# ---------------------------------------------------------------------------

@dataclass
class AssignmentResult:
    matches: list[tuple[int, int]]      # (track index, detection index)
    unmatched_tracks: list[int]
    unmatched_dets: list[int]


def build_affinity(graph: STGraph, params: gnn.GNNParams,
                   fwd: gnn.GNNForward | None = None):
    """Affinity matrix over all (tracklet, detection) pairs from final node features."""
    if fwd is None:
        fwd = gnn.message_pass(graph, params)
    matrix, cache = gnn.affinity_forward(fwd.final, graph.n_tracks, graph.n_dets, params)
    return matrix, fwd, cache


def solve_assignment(affinity: np.ndarray, gate: float = 0.5) -> AssignmentResult:
    """Maximum-total-score assignment (Hungarian on cost 1 - A), gated post-solve.

    Matches scoring below the gate are discarded; each track and detection
    appears in at most one match.
    """
    affinity = np.asarray(affinity, dtype=float)
    n_t, n_d = affinity.shape
    if n_t == 0 or n_d == 0:
        return AssignmentResult([], list(range(n_t)), list(range(n_d)))
    if not np.all(np.isfinite(affinity)):
        raise ValueError("affinity matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(1.0 - affinity)
    matches = [(int(i), int(j)) for i, j in zip(rows, cols) if affinity[i, j] >= gate]
    matched_t = {i for i, _ in matches}
    matched_d = {j for _, j in matches}
    return AssignmentResult(
        matches,
        [i for i in range(n_t) if i not in matched_t],
        [j for j in range(n_d) if j not in matched_d],
    )


# ---------------------------------------------------------------------------
# Lifecycle
# ---------------------------------------------------------------------------

def update_tracklet(tracklet: Tracklet, assignment: AssignmentResult,
                    detections: DetectionSet, max_age: int,
                    next_id: int) -> tuple[Tracklet, int, list[int]]:
    """Advance the tracklet one frame.

    Matched tracks adopt the detection's box and feature and reset their miss
    count; unmatched detections spawn fresh ids; unmatched tracks age and are
    dropped once miss_count exceeds max_age. Returns the new tracklet, the
    next unused id, and the ids born this frame.
    """
    entries: list[TrackEntry] = []
    for ti, dj in assignment.matches:
        old = tracklet.entries[ti]
        entries.append(TrackEntry(old.track_id, detections.boxes[dj],
                                  detections.features[dj], age=old.age + 1,
                                  miss_count=0))
    for ti in assignment.unmatched_tracks:
        old = tracklet.entries[ti]
        missed = old.miss_count + 1
        if missed > max_age:
            continue
        entries.append(TrackEntry(old.track_id, old.box, old.feature,
                                  age=old.age + 1, miss_count=missed))
    born: list[int] = []
    for dj in assignment.unmatched_dets:
        entries.append(TrackEntry(next_id, detections.boxes[dj],
                                  detections.features[dj], age=1, miss_count=0))
        born.append(next_id)
        next_id += 1
    return Tracklet(entries, frame_index=detections.frame_index), next_id, born


# ---------------------------------------------------------------------------
# Ground-truth affinity and tracking loss
# ---------------------------------------------------------------------------

def gt_affinity(det_boxes: list[Box3D], gt_boxes: list[Box3D], gt_ids: list[int],
                track_ids: list[int], iou_threshold: float = 0.5) -> np.ndarray:
    """Binary target matrix from volumetric-overlap id assignment.

    Each detection takes the id of its highest-IoU ground-truth box when that
    IoU exceeds the threshold. A ground-truth id is granted to at most one
    detection (the strongest claimant; lowest index on ties) so every row and
    column holds at most a single 1.
    """
    n_t, n_d = len(track_ids), len(det_boxes)
    matrix = np.zeros((n_t, n_d))
    if n_t == 0 or n_d == 0 or len(gt_boxes) == 0:
        return matrix
    best_iou = np.zeros(n_d)
    best_gt = np.full(n_d, -1, dtype=int)
    for j, det in enumerate(det_boxes):
        for g, gt in enumerate(gt_boxes):
            v = iou_3d(det, gt)
            if v > best_iou[j]:
                best_iou[j] = v
                best_gt[j] = g
    claimed: dict[int, tuple[float, int]] = {}
    for j in range(n_d):
        if best_gt[j] >= 0 and best_iou[j] > iou_threshold:
            g = int(best_gt[j])
            if g not in claimed or best_iou[j] > claimed[g][0]:
                claimed[g] = (best_iou[j], j)
    det_id = {j: gt_ids[g] for g, (_, j) in claimed.items()}
    for i, tid in enumerate(track_ids):
        for j, did in det_id.items():
            if did == tid:
                matrix[i, j] = 1.0
    return matrix


def tracking_loss(affinity: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error over the affinity grid; 0 for an empty matrix."""
    if affinity.shape != target.shape:
        raise ValueError(f"shape mismatch: {affinity.shape} vs {target.shape}")
    if affinity.size == 0:
        return 0.0
    return float(np.mean((affinity - target) ** 2))


def tracking_loss_grad(affinity: np.ndarray, target: np.ndarray) -> np.ndarray:
    if affinity.size == 0:
        return np.zeros_like(affinity)
    return 2.0 * (affinity - target) / affinity.size


# ---------------------------------------------------------------------------
# Online tracker
# ---------------------------------------------------------------------------

@dataclass
class TrackOutput:
    frame_index: int
    track_id: int
    box: Box3D
    score: float


class Tracker:
    """Sequential frame-by-frame tracker; state is the tracklet of the last frame."""

    def __init__(self, params: gnn.GNNParams, prune_cfg: PruningConfig,
                 gate: float = 0.5, max_age: int = 2,
                 calibrator: ScoreCalibrator | None = None,
                 prune_enabled: bool = True):
        self.params = params
        self.prune_cfg = prune_cfg
        self.gate = gate
        self.max_age = max_age
        self.calibrator = calibrator
        self.prune_enabled = prune_enabled
        self.tracklet = Tracklet([], frame_index=-1)
        self.next_id = 0

    def reset(self) -> None:
        self.tracklet = Tracklet([], frame_index=-1)
        self.next_id = 0

    def _calibrated(self, detections: DetectionSet) -> DetectionSet:
        if self.calibrator is None:
            return detections
        track_boxes = self.tracklet.boxes
        ious = [nearest_tracklet_iou(b, track_boxes) for b in detections.boxes]
        raws = [b.score for b in detections.boxes]
        adjusted = self.calibrator.adjust_batch(detections.features, raws, ious)
        boxes = [Box3D(b.center, b.dims, b.yaw, float(s), b.class_id)
                 for b, s in zip(detections.boxes, adjusted)]
        return DetectionSet(boxes, detections.features, detections.frame_index)

    def step(self, detections: DetectionSet) -> list[TrackOutput]:
        """Consume one frame; emit the tracks updated or born at this frame."""
        detections = self._calibrated(detections)
        graph = build_graph(detections, self.tracklet)
        if self.prune_enabled:
            graph = prune(graph, self.prune_cfg)
        affinity, _, _ = build_affinity(graph, self.params)
        assignment = solve_assignment(affinity, self.gate)
        self.tracklet, self.next_id, born = update_tracklet(
            self.tracklet, assignment, detections, self.max_age, self.next_id)
        emitted: list[TrackOutput] = []
        for entry in self.tracklet.entries:
            if entry.miss_count == 0:
                emitted.append(TrackOutput(detections.frame_index, entry.track_id,
                                           entry.box, entry.box.score))
        return emitted

    def run(self, frames) -> list[TrackOutput]:
        self.reset()
        out: list[TrackOutput] = []
        for detections in frames:
            out.extend(self.step(detections))
        return out


# ---------------------------------------------------------------------------
# Teacher-forced training
# ---------------------------------------------------------------------------

def teacher_tracklet(boxes: list[Box3D], ids: list[int], features,
                     frame_index: int) -> Tracklet:
    """Tracklet standing in for the tracker's state: ground truth of frame t-1."""
    entries = []
    for box, tid, feat in zip(boxes, ids, features):
        if not isinstance(feat, InstanceFeature):
            feat = InstanceFeature(feat, source="tracklet", object_index=tid,
                                   timestamp=frame_index)
        entries.append(TrackEntry(tid, box, feat))
    return Tracklet(entries, frame_index=frame_index)


@dataclass
class Transition:
    """One training sample: detections at t with the ground truth of t-1 and t."""

    detections: DetectionSet
    prev_tracklet: Tracklet
    gt_boxes: list[Box3D]
    gt_ids: list[int]


def transition_loss(tr: Transition, params: gnn.GNNParams,
                    prune_cfg: PruningConfig, prune_enabled: bool = True,
                    gt_iou_threshold: float = 0.5) -> float:
    """Affinity MSE of one transition, no gradients."""
    graph = build_graph(tr.detections, tr.prev_tracklet)
    if prune_enabled:
        graph = prune(graph, prune_cfg)
    fwd = gnn.message_pass(graph, params)
    affinity, _ = gnn.affinity_forward(fwd.final, graph.n_tracks, graph.n_dets, params)
    target = gt_affinity(tr.detections.boxes, tr.gt_boxes, tr.gt_ids,
                         tr.prev_tracklet.ids, gt_iou_threshold)
    return tracking_loss(affinity, target)


def transition_loss_and_grads(tr: Transition, params: gnn.GNNParams,
                              prune_cfg: PruningConfig, prune_enabled: bool = True,
                              gt_iou_threshold: float = 0.5,
                              feature_jitter: np.ndarray | None = None):
    """Affinity MSE against the ground-truth matrix plus parameter gradients.

    feature_jitter, when given, is added to the node input features (training
    augmentation); boxes and targets are untouched.
    """
    graph = build_graph(tr.detections, tr.prev_tracklet)
    if prune_enabled:
        graph = prune(graph, prune_cfg)
    features = graph.features()
    if feature_jitter is not None:
        features = features + feature_jitter
    fwd = gnn.message_pass(graph, params, features=features)
    affinity, cache = gnn.affinity_forward(fwd.final, graph.n_tracks, graph.n_dets, params)
    target = gt_affinity(tr.detections.boxes, tr.gt_boxes, tr.gt_ids,
                         tr.prev_tracklet.ids, gt_iou_threshold)
    loss = tracking_loss(affinity, target)
    grads = gnn.backward(graph, params, fwd, cache, tracking_loss_grad(affinity, target))
    return loss, grads


def train_tracking(transitions: list[Transition], params: gnn.GNNParams,
                   steps: int, optimizer, prune_cfg: PruningConfig,
                   prune_enabled: bool = True, gt_iou_threshold: float = 0.5,
                   augment_noise: float = 0.0, augment_rng=None,
                   callback=None) -> list[float]:
    """Gradient descent on the mean affinity MSE over all transitions.

    One optimizer step per pass; returns the per-step loss history.
    augment_noise > 0 adds fresh Gaussian jitter to the node features each
    step so the learned boundaries cannot collapse onto the exact training
    vectors. Deterministic given fixed transitions, initial parameters, and
    the augmentation generator.
    """
    named = params.named_parameters()
    if augment_noise > 0.0 and augment_rng is None:
        augment_rng = np.random.default_rng(0)
    history: list[float] = []
    for step in range(steps):
        total = 0.0
        acc = {k: np.zeros_like(v) for k, v in named.items()}
        for tr in transitions:
            jitter = None
            if augment_noise > 0.0:
                n_nodes = len(tr.prev_tracklet.entries) + len(tr.detections)
                dim = params.feature_dim
                jitter = augment_noise * augment_rng.normal(size=(n_nodes, dim))
            loss, grads = transition_loss_and_grads(
                tr, params, prune_cfg, prune_enabled, gt_iou_threshold, jitter)
            total += loss
            for k in acc:
                acc[k] += grads[k]
        n = max(len(transitions), 1)
        for k in acc:
            acc[k] /= n
        optimizer.step(acc)
        history.append(total / n)
        if callback is not None:
            callback(step, history[-1])
    return history
