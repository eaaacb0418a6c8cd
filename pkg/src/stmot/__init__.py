"""Spatio-temporal multi-object tracking engine.

Detection boxes and instance embeddings come from files or the synthetic
generator; this package supplies the association math: rotated-box geometry,
gated temporal feature blending, tracklet-aware score calibration, a pruned
and attention-gated association GNN, Hungarian assignment, track lifecycle,
and the CLEAR / recall-integrated evaluation family.
"""

from .config import RunConfig, load_config, save_config
from .geometry import Box3D, BoxBEV, center_distance_bev, iou_3d, iou_bev, to_bev
from .graph import PruningConfig, STGraph, build_graph, prune
from .metrics import MetricReport, amota_family, evaluate_clear, mota, motp
from .state import DetectionSet, InstanceFeature, TrackEntry, Tracklet
from .synth import SequenceBundle, SynthSpec, generate, load_bundle, save_bundle
from .tracker import Tracker, gt_affinity, solve_assignment, tracking_loss

__all__ = [
    "Box3D", "BoxBEV", "to_bev", "iou_bev", "iou_3d", "center_distance_bev",
    "DetectionSet", "InstanceFeature", "TrackEntry", "Tracklet",
    "PruningConfig", "STGraph", "build_graph", "prune",
    "Tracker", "solve_assignment", "gt_affinity", "tracking_loss",
    "MetricReport", "amota_family", "evaluate_clear", "mota", "motp",
    "RunConfig", "load_config", "save_config",
    "SynthSpec", "SequenceBundle", "generate", "save_bundle", "load_bundle",
]

__version__ = "0.1.0"
