"""Run configuration: one JSON document, schema-validated, flag overrides win."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields


@dataclass
class RunConfig:
    # association graph
    spatial_prune_dist: float = 15.0
    temporal_prune_dist: float = 5.0
    prune_enabled: bool = True
    # message passing
    gnn_iterations: int = 3
    feature_dim: int = 16
    tied_weights: bool = False
    gated_attention: bool = True
    affinity_combine: str = "product"
    affinity_hidden: tuple[int, ...] = (32, 32)
    # score calibration
    calibration_hidden: tuple[int, ...] = (64, 64)
    calibrate_scores: bool = False
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    # assignment and lifecycle
    gate: float = 0.5
    max_age: int = 2
    gt_iou_threshold: float = 0.5
    # evaluation
    match_iou_threshold: float = 0.25
    recall_levels: int = 40
    # training
    learning_rate: float = 0.005
    train_steps: int = 500
    optimizer: str = "adam"
    augment_noise: float = 0.3
    # reproducibility
    seed: int = 0
    weights: str | None = None

    def __post_init__(self):
        self.affinity_hidden = tuple(int(v) for v in self.affinity_hidden)
        self.calibration_hidden = tuple(int(v) for v in self.calibration_hidden)
        if self.affinity_combine not in ("product", "concat"):
            raise ValueError(f"affinity_combine must be product|concat, got {self.affinity_combine!r}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd|adam, got {self.optimizer!r}")
        if self.spatial_prune_dist <= 0 or self.temporal_prune_dist <= 0:
            raise ValueError("prune distances must be positive")
        if self.gnn_iterations < 1:
            raise ValueError("gnn_iterations must be >= 1")
        if not (0.0 <= self.gate <= 1.0):
            raise ValueError("gate must be in [0, 1]")
        if self.max_age < 0:
            raise ValueError("max_age must be >= 0")
        if self.recall_levels < 1:
            raise ValueError("recall_levels must be >= 1")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["affinity_hidden"] = list(self.affinity_hidden)
        doc["calibration_hidden"] = list(self.calibration_hidden)
        return doc


_FIELD_NAMES = {f.name for f in fields(RunConfig)}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (defaults when path is None) and apply overrides on top.

    Unknown keys in either source are rejected.
    """
    doc: dict = {}
    if path is not None:
        with open(path) as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        unknown = set(doc) - _FIELD_NAMES
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    if overrides:
        unknown = set(overrides) - _FIELD_NAMES
        if unknown:
            raise ValueError(f"unknown config overrides {sorted(unknown)}")
        doc.update(overrides)
    return RunConfig(**doc)


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2)
