"""Per-frame tracker state containers shared across modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box3D


@dataclass
class InstanceFeature:
    """Pooled per-object embedding vector plus bookkeeping tags."""

    vector: np.ndarray
    source: str = "detection"  # "detection" | "tracklet"
    object_index: int = -1
    timestamp: int = -1

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)
        if self.vector.ndim != 1:
            raise ValueError(f"instance feature must be a vector, got shape {self.vector.shape}")
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("non-finite instance feature")
        if self.source not in ("detection", "tracklet"):
            raise ValueError(f"unknown feature source {self.source!r}")


def feature_vector(feat) -> np.ndarray:
    """Accept an InstanceFeature or a bare array; return the float64 vector."""
    if isinstance(feat, InstanceFeature):
        return feat.vector
    return np.asarray(feat, dtype=float)


@dataclass
class DetectionSet:
    """Detections of one frame: boxes and features aligned by index."""

    boxes: list[Box3D]
    features: list[InstanceFeature]
    frame_index: int

    def __post_init__(self):
        if len(self.boxes) != len(self.features):
            raise ValueError(f"{len(self.boxes)} boxes vs {len(self.features)} features")

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass
class TrackEntry:
    track_id: int
    box: Box3D
    feature: InstanceFeature
    age: int = 1
    miss_count: int = 0


@dataclass
class Tracklet:
    """Tracked-object state carried between frames."""

    entries: list[TrackEntry] = field(default_factory=list)
    frame_index: int = -1

    def __post_init__(self):
        ids = [e.track_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate track ids in tracklet")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def boxes(self) -> list[Box3D]:
        return [e.box for e in self.entries]

    @property
    def ids(self) -> list[int]:
        return [e.track_id for e in self.entries]
