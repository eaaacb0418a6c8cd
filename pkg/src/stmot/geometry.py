"""Oriented-box geometry on the ground plane.

Boxes carry a center, dimensions and a yaw angle. The bird's-eye-view (BEV)
footprint of a 3D box is the oriented rectangle left after dropping the
vertical axis. Overlap between rotated rectangles is computed exactly with
Sutherland-Hodgman convex clipping and the shoelace formula; 3D overlap is
the BEV intersection area times the vertical overlap length.

Everything here is a pure function of immutable values and double precision
throughout, since IoU thresholds sit close to decision boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Dimensions below this are rejected: they would produce degenerate polygons
# inside the clipping routine.
MIN_DIMENSION = 1e-6


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    y = yaw - 2.0 * math.pi * math.floor((yaw + math.pi) / (2.0 * math.pi))
    if y <= -math.pi:
        y = math.pi
    return y


def _check_dims(dims) -> None:
    for d in dims:
        if not math.isfinite(d) or d < MIN_DIMENSION:
            raise ValueError(f"box dimensions must be >= {MIN_DIMENSION}, got {dims}")


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D object box.

    center is (x, y, z) in meters with z up, dims is (length, width, height)
    in meters, yaw rotates the length axis about z and is normalized to
    (-pi, pi] at construction.
    """

    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float
    score: float = 1.0
    class_id: int = 0

    def __post_init__(self):
        _check_dims(self.dims)
        if not all(math.isfinite(c) for c in self.center):
            raise ValueError(f"non-finite box center {self.center}")
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def volume(self) -> float:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def z_extent(self) -> tuple[float, float]:
        half = self.dims[2] / 2.0
        return self.center[2] - half, self.center[2] + half


@dataclass(frozen=True)
class BoxBEV:
    """Oriented rectangle on the ground plane: center (x, y), dims (length, width)."""

    center: tuple[float, float]
    dims: tuple[float, float]
    yaw: float

    def __post_init__(self):
        _check_dims(self.dims)
        if not all(math.isfinite(c) for c in self.center):
            raise ValueError(f"non-finite box center {self.center}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def area(self) -> float:
        return self.dims[0] * self.dims[1]


def to_bev(box: Box3D) -> BoxBEV:
    """Project a 3D box to its BEV footprint (drops z and height)."""
    return BoxBEV(center=(box.center[0], box.center[1]),
                  dims=(box.dims[0], box.dims[1]),
                  yaw=box.yaw)


def bev_corners(box: BoxBEV) -> np.ndarray:
    """Corner coordinates of the footprint rectangle, shape (4, 2), CCW order."""
    half_l = box.dims[0] / 2.0
    half_w = box.dims[1] / 2.0
    local = np.array([
        [half_l, half_w],
        [-half_l, half_w],
        [-half_l, -half_w],
        [half_l, -half_w],
    ])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.asarray(box.center)


def polygon_area(points: np.ndarray) -> float:
    """Shoelace area of a simple polygon given as (n, 2) vertices."""
    if len(points) < 3:
        return 0.0
    x = points[:, 0]
    y = points[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon against a CCW convex polygon."""
    output = [p for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]
        polygon = output
        output = []
        prev = polygon[-1]
        prev_in = ex * (prev[1] - a[1]) - ey * (prev[0] - a[0]) >= 0.0
        for cur in polygon:
            cur_in = ex * (cur[1] - a[1]) - ey * (cur[0] - a[0]) >= 0.0
            if cur_in != prev_in:
                # Segment straddles the clipping line; insert the crossing point.
                d_prev = ex * (prev[1] - a[1]) - ey * (prev[0] - a[0])
                d_cur = ex * (cur[1] - a[1]) - ey * (cur[0] - a[0])
                t = d_prev / (d_prev - d_cur)
                output.append(prev + t * (cur - prev))
            if cur_in:
                output.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(output) if output else np.empty((0, 2))


def intersection_area_bev(a: BoxBEV, b: BoxBEV) -> float:
    """Exact overlap area of two oriented rectangles."""
    clipped = clip_convex(bev_corners(a), bev_corners(b))
    return polygon_area(clipped)


def iou_bev(a: BoxBEV, b: BoxBEV) -> float:
    """Rotation-aware IoU of two BEV rectangles, in [0, 1]."""
    inter = intersection_area_bev(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU: BEV polygon overlap times vertical overlap, over the union."""
    inter_bev = intersection_area_bev(to_bev(a), to_bev(b))
    if inter_bev <= 0.0:
        return 0.0
    a_lo, a_hi = a.z_extent()
    b_lo, b_hi = b.z_extent()
    overlap_z = min(a_hi, b_hi) - max(a_lo, b_lo)
    if overlap_z <= 0.0:
        return 0.0
    inter = inter_bev * overlap_z
    union = a.volume + b.volume - inter
    return min(max(inter / union, 0.0), 1.0)


def center_distance_bev(a, b) -> float:
    """Euclidean distance between two box centers on the ground plane.

    Accepts Box3D or BoxBEV on either side.
    """
    ax, ay = a.center[0], a.center[1]
    bx, by = b.center[0], b.center[1]
    return math.hypot(ax - bx, ay - by)


def monte_carlo_iou_bev(a: BoxBEV, b: BoxBEV, samples: int, rng: np.random.Generator) -> float:
    """Monte-Carlo IoU estimate: uniform samples inside box a tested against b.

    Independent of the clipping path; used as a test oracle.
    """
    u = rng.uniform(-0.5, 0.5, size=(samples, 2))
    pts = u * np.asarray(a.dims)
    ca, sa = math.cos(a.yaw), math.sin(a.yaw)
    world = pts @ np.array([[ca, sa], [-sa, ca]]) + np.asarray(a.center)
    # into b's local frame
    rel = world - np.asarray(b.center)
    cb, sb = math.cos(b.yaw), math.sin(b.yaw)
    local = rel @ np.array([[cb, -sb], [sb, cb]])
    inside = (np.abs(local[:, 0]) <= b.dims[0] / 2.0) & (np.abs(local[:, 1]) <= b.dims[1] / 2.0)
    inter = a.area * float(np.mean(inside))
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0
