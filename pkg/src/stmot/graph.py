"""Spatio-temporal association graph over detection and tracklet nodes.

All same-frame node pairs are connected by directed spatial edges and all
cross-frame pairs by directed temporal edges. Distance-based pruning
deactivates (never deletes) edges whose endpoint centers are farther apart
on the ground plane than the configured thresholds, so edge counts and
prune decisions stay inspectable and pruned/full message passing can be
compared on the same structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Box3D, center_distance_bev
from .state import DetectionSet, Tracklet

TAG_CURRENT = "t"
TAG_PREVIOUS = "t-1"

KIND_SPATIAL_T = "spatial_t"
KIND_SPATIAL_PREV = "spatial_prev"
KIND_TEMPORAL = "temporal"


@dataclass(frozen=True)
class GraphNode:
    feature: np.ndarray
    box: Box3D
    timestamp: str  # TAG_CURRENT | TAG_PREVIOUS
    index: int      # position within its own set


@dataclass
class GraphEdge:
    src: int
    dst: int
    kind: str
    active: bool = True


@dataclass
class STGraph:
    """Nodes are ordered tracklet-first: [0, n_tracks) then [n_tracks, n_tracks + n_dets)."""

    nodes: list[GraphNode]
    edges: list[GraphEdge]
    n_tracks: int
    n_dets: int

    def features(self) -> np.ndarray:
        if not self.nodes:
            return np.zeros((0, 0))
        return np.stack([n.feature for n in self.nodes])

    def active_edges(self) -> list[GraphEdge]:
        return [e for e in self.edges if e.active]

    def active_edge_set(self) -> set[tuple[int, int]]:
        return {(e.src, e.dst) for e in self.edges if e.active}


@dataclass(frozen=True)
class PruningConfig:
    """BEV center-distance thresholds, meters: spatial within a frame, temporal across."""

    spatial_max_dist: float = 15.0
    temporal_max_dist: float = 5.0

    def __post_init__(self):
        if self.spatial_max_dist <= 0 or self.temporal_max_dist <= 0:
            raise ValueError("pruning thresholds must be strictly positive")


def build_graph(detections: DetectionSet, tracklet: Tracklet) -> STGraph:
    """Fully-connected two-frame graph; either side may be empty.

    Directed edge count is n_d*(n_d-1) + n_t*(n_t-1) + 2*n_d*n_t.
    """
    nodes: list[GraphNode] = []
    for i, entry in enumerate(tracklet.entries):
        nodes.append(GraphNode(np.asarray(entry.feature.vector, dtype=float),
                               entry.box, TAG_PREVIOUS, i))
    for j, (box, feat) in enumerate(zip(detections.boxes, detections.features)):
        nodes.append(GraphNode(np.asarray(feat.vector, dtype=float), box, TAG_CURRENT, j))

    n_t = len(tracklet.entries)
    n_d = len(detections)
    edges: list[GraphEdge] = []
    for a in range(n_t):
        for b in range(n_t):
            if a != b:
                edges.append(GraphEdge(a, b, KIND_SPATIAL_PREV))
    for a in range(n_d):
        for b in range(n_d):
            if a != b:
                edges.append(GraphEdge(n_t + a, n_t + b, KIND_SPATIAL_T))
    for a in range(n_t):
        for b in range(n_d):
            edges.append(GraphEdge(a, n_t + b, KIND_TEMPORAL))
            edges.append(GraphEdge(n_t + b, a, KIND_TEMPORAL))
    return STGraph(nodes, edges, n_t, n_d)


def prune(graph: STGraph, cfg: PruningConfig) -> STGraph:
    """Deactivate edges whose endpoint centers exceed the distance thresholds.

    Activity is recomputed from geometry alone, so the operation is
    idempotent and symmetric per undirected pair. Nodes are never removed.
    """
    edges = []
    for e in graph.edges:
        dist = center_distance_bev(graph.nodes[e.src].box, graph.nodes[e.dst].box)
        limit = cfg.temporal_max_dist if e.kind == KIND_TEMPORAL else cfg.spatial_max_dist
        edges.append(GraphEdge(e.src, e.dst, e.kind, active=dist <= limit))
    return STGraph(list(graph.nodes), edges, graph.n_tracks, graph.n_dets)


def graph_to_json(graph: STGraph) -> dict:
    """Inspectable dump: nodes, directed edges, per-edge prune flags."""
    return {
        "n_tracks": graph.n_tracks,
        "n_dets": graph.n_dets,
        "nodes": [
            {
                "node": i,
                "timestamp": n.timestamp,
                "index": n.index,
                "center": list(n.box.center),
                "feature_dim": int(n.feature.shape[0]),
            }
            for i, n in enumerate(graph.nodes)
        ],
        "edges": [
            {"src": e.src, "dst": e.dst, "kind": e.kind, "active": e.active}
            for e in graph.edges
        ],
    }


def dump_graph(graph: STGraph, path) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_json(graph), fh, indent=2)
