"""Synthetic tracking scenarios: constant-velocity objects, noisy detections.

Objects move on the ground plane with fixed heading and speed. Detections
are the ground-truth boxes plus Gaussian jitter, with per-object dropout
(missed detections) and uniform clutter (false detections). Per-object
features are an id-anchored base vector plus per-frame noise, so temporal
association is learnable from the features alone. Everything derives from
one seed; features are quantized to float32 so that bundles round-trip the
sidecar format exactly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import Box3D, normalize_yaw
from .kitti_io import (KittiRecord, box_from_record, parse_tracking_file,
                       record_from_box, write_tracking_file)
from .numerics import rng_stream
from .sidecar import read_sidecar, validate_against_counts, write_sidecar
from .state import DetectionSet, InstanceFeature


@dataclass(frozen=True)
class SynthSpec:
    num_objects: int = 6
    num_frames: int = 10
    feature_dim: int = 16
    area_size: float = 40.0
    speed_min: float = 0.3
    speed_max: float = 1.2
    pos_noise: float = 0.15
    dim_noise: float = 0.02
    yaw_noise: float = 0.02
    feature_noise: float = 0.10
    dropout_rate: float = 0.0
    clutter_rate: float = 0.0       # expected clutter boxes per frame
    score_true_mean: float = 0.78
    score_true_std: float = 0.10
    score_clutter_mean: float = 0.45
    score_clutter_std: float = 0.12
    seed: int = 0
    # Observation realization. The scene (trajectories, id bases) follows
    # `seed`; jitter, dropout, clutter, scores and per-frame feature noise
    # follow `noise_seed`, so one scene can be sampled under fresh noise.
    # None means: reuse `seed`.
    noise_seed: int | None = None


@dataclass
class FrameTruth:
    boxes: list[Box3D]
    ids: list[int]
    features: list[InstanceFeature]


@dataclass
class SequenceBundle:
    sequence_id: str
    feature_dim: int
    gt: list[FrameTruth]                 # indexed by frame
    detections: list[DetectionSet]
    spec: SynthSpec | None = None

    @property
    def num_frames(self) -> int:
        return len(self.gt)

    def gt_frames(self) -> dict[int, list[tuple[int, Box3D]]]:
        return {f: list(zip(truth.ids, truth.boxes)) for f, truth in enumerate(self.gt)}


def _f32(vec: np.ndarray) -> np.ndarray:
    return vec.astype(np.float32).astype(float)


def _id_bases(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Id-anchored embedding bases, one unit vector per object.

    When the feature space has room, each object gets a nonnegative vector on
    its own coordinate block: bases are exactly orthogonal (cross-object
    similarity ~ 0, so association is learnable) and live in the positive
    orthant, where relu-style downstream processing is lossless. Falls back
    to random directions when n > d.
    """
    if n <= d:
        blocks = np.array_split(rng.permutation(d), n)
        base = np.zeros((n, d))
        for o, blk in enumerate(blocks):
            vals = np.abs(rng.normal(size=len(blk))) + 0.3
            base[o, blk] = vals / np.linalg.norm(vals)
        return base
    base = np.abs(rng.normal(size=(n, d)))
    return base / np.linalg.norm(base, axis=1, keepdims=True)


def _clip_score(s: float) -> float:
    return float(min(max(s, 0.02), 0.98))


def generate(spec: SynthSpec) -> SequenceBundle:
    """Deterministic scenario from the spec's seeds."""
    noise_seed = spec.seed if spec.noise_seed is None else spec.noise_seed
    traj_rng = rng_stream(spec.seed, 0)
    det_rng = rng_stream(noise_seed, 1)
    base_rng = rng_stream(spec.seed, 2)
    feat_rng = rng_stream(noise_seed, 3)

    n, d = spec.num_objects, spec.feature_dim
    start = traj_rng.uniform(0.15 * spec.area_size, 0.85 * spec.area_size, size=(n, 2))
    heading = traj_rng.uniform(-math.pi, math.pi, size=n)
    speed = traj_rng.uniform(spec.speed_min, spec.speed_max, size=n)
    length = traj_rng.uniform(3.8, 4.6, size=n)
    width = traj_rng.uniform(1.7, 2.0, size=n)
    height = traj_rng.uniform(1.4, 1.8, size=n)
    base = _id_bases(base_rng, n, d)

    gt: list[FrameTruth] = []
    detections: list[DetectionSet] = []
    for t in range(spec.num_frames):
        boxes, ids, feats = [], [], []
        for o in range(n):
            cx = start[o, 0] + t * speed[o] * math.cos(heading[o])
            cy = start[o, 1] + t * speed[o] * math.sin(heading[o])
            box = Box3D(center=(cx, cy, height[o] / 2.0),
                        dims=(length[o], width[o], height[o]),
                        yaw=heading[o], score=1.0, class_id=0)
            vec = _f32(base[o] + spec.feature_noise * feat_rng.normal(size=d))
            boxes.append(box)
            ids.append(o)
            feats.append(InstanceFeature(vec, source="tracklet", object_index=o, timestamp=t))
        gt.append(FrameTruth(boxes, ids, feats))

        det_boxes, det_feats = [], []
        for o in range(n):
            if spec.dropout_rate > 0 and det_rng.random() < spec.dropout_rate:
                continue
            g = gt[t].boxes[o]
            center = (g.center[0] + det_rng.normal(0.0, spec.pos_noise),
                      g.center[1] + det_rng.normal(0.0, spec.pos_noise),
                      g.center[2])
            dims = tuple(max(0.5, v + det_rng.normal(0.0, spec.dim_noise)) for v in g.dims)
            yaw = normalize_yaw(g.yaw + det_rng.normal(0.0, spec.yaw_noise))
            score = _clip_score(det_rng.normal(spec.score_true_mean, spec.score_true_std))
            det_boxes.append(Box3D(center, dims, yaw, score, 0))
            det_feats.append(_f32(base[o] + spec.feature_noise * feat_rng.normal(size=d)))
        n_clutter = int(det_rng.poisson(spec.clutter_rate)) if spec.clutter_rate > 0 else 0
        for _ in range(n_clutter):
            center = (det_rng.uniform(0.0, spec.area_size),
                      det_rng.uniform(0.0, spec.area_size), 0.8)
            dims = (det_rng.uniform(3.5, 4.8), det_rng.uniform(1.6, 2.1),
                    det_rng.uniform(1.3, 1.9))
            yaw = det_rng.uniform(-math.pi, math.pi)
            score = _clip_score(det_rng.normal(spec.score_clutter_mean, spec.score_clutter_std))
            det_boxes.append(Box3D(center, dims, yaw, score, 0))
            fake = feat_rng.normal(size=d)
            fake /= np.linalg.norm(fake)
            det_feats.append(_f32(fake + spec.feature_noise * feat_rng.normal(size=d)))
        order = det_rng.permutation(len(det_boxes))
        det_boxes = [det_boxes[i] for i in order]
        det_feats = [det_feats[i] for i in order]
        features = [InstanceFeature(v, source="detection", object_index=i, timestamp=t)
                    for i, v in enumerate(det_feats)]
        detections.append(DetectionSet(det_boxes, features, frame_index=t))

    return SequenceBundle(sequence_id=f"synth-{spec.seed}", feature_dim=d,
                          gt=gt, detections=detections, spec=spec)


# ---------------------------------------------------------------------------
# Bundle persistence
# ---------------------------------------------------------------------------

GT_FILE = "gt.txt"
DET_FILE = "detections.txt"
GT_FEATURES = "gt_features.bin"
DET_FEATURES = "det_features.bin"
META_FILE = "meta.json"


def save_bundle(bundle: SequenceBundle, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    gt_records, det_records = [], []
    gt_entries, det_entries = [], []
    for t, truth in enumerate(bundle.gt):
        for i, (box, tid, feat) in enumerate(zip(truth.boxes, truth.ids, truth.features)):
            gt_records.append(record_from_box(t, tid, box, with_score=False))
            gt_entries.append((t, i, feat.vector))
    for det in bundle.detections:
        for i, (box, feat) in enumerate(zip(det.boxes, det.features)):
            det_records.append(record_from_box(det.frame_index, -1, box, with_score=True))
            det_entries.append((det.frame_index, i, feat.vector))
    write_tracking_file(os.path.join(directory, GT_FILE), gt_records)
    write_tracking_file(os.path.join(directory, DET_FILE), det_records)
    write_sidecar(os.path.join(directory, GT_FEATURES), bundle.feature_dim, gt_entries)
    write_sidecar(os.path.join(directory, DET_FEATURES), bundle.feature_dim, det_entries)
    meta = {
        "sequence_id": bundle.sequence_id,
        "num_frames": bundle.num_frames,
        "feature_dim": bundle.feature_dim,
        "spec": asdict(bundle.spec) if bundle.spec is not None else None,
    }
    with open(os.path.join(directory, META_FILE), "w") as fh:
        json.dump(meta, fh, indent=2)


def load_bundle(directory) -> SequenceBundle:
    with open(os.path.join(directory, META_FILE)) as fh:
        meta = json.load(fh)
    num_frames = int(meta["num_frames"])
    dim = int(meta["feature_dim"])
    spec = SynthSpec(**meta["spec"]) if meta.get("spec") else None

    gt_records = parse_tracking_file(os.path.join(directory, GT_FILE))
    det_records = parse_tracking_file(os.path.join(directory, DET_FILE))
    gt_path = os.path.join(directory, GT_FEATURES)
    det_path = os.path.join(directory, DET_FEATURES)
    gt_dim, gt_table = read_sidecar(gt_path)
    det_dim, det_table = read_sidecar(det_path)
    if gt_dim != dim or det_dim != dim:
        raise ValueError(f"sidecar dims ({gt_dim}, {det_dim}) != meta dim {dim}")

    gt_by_frame: dict[int, list[KittiRecord]] = {}
    for rec in gt_records:
        gt_by_frame.setdefault(rec.frame, []).append(rec)
    det_by_frame: dict[int, list[KittiRecord]] = {}
    for rec in det_records:
        det_by_frame.setdefault(rec.frame, []).append(rec)
    validate_against_counts(gt_path, gt_table,
                            {f: len(v) for f, v in gt_by_frame.items()})
    validate_against_counts(det_path, det_table,
                            {f: len(v) for f, v in det_by_frame.items()})

    gt, detections = [], []
    for t in range(num_frames):
        boxes, ids, feats = [], [], []
        for i, rec in enumerate(gt_by_frame.get(t, [])):
            boxes.append(box_from_record(rec))
            ids.append(rec.track_id)
            feats.append(InstanceFeature(gt_table[(t, i)], source="tracklet",
                                         object_index=rec.track_id, timestamp=t))
        gt.append(FrameTruth(boxes, ids, feats))
        det_boxes, det_feats = [], []
        for i, rec in enumerate(det_by_frame.get(t, [])):
            det_boxes.append(box_from_record(rec))
            det_feats.append(InstanceFeature(det_table[(t, i)], source="detection",
                                             object_index=i, timestamp=t))
        detections.append(DetectionSet(det_boxes, det_feats, frame_index=t))
    return SequenceBundle(sequence_id=meta.get("sequence_id", "bundle"),
                          feature_dim=dim, gt=gt, detections=detections, spec=spec)
