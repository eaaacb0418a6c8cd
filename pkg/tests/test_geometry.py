import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stmot.geometry import (Box3D, BoxBEV, bev_corners, center_distance_bev,
                            intersection_area_bev, iou_3d, iou_bev,
                            monte_carlo_iou_bev, normalize_yaw, polygon_area,
                            to_bev)


def box_bev(x, y, l, w, yaw=0.0):
    return BoxBEV(center=(x, y), dims=(l, w), yaw=yaw)


def box3d(x, y, z, l=4.0, w=2.0, h=1.5, yaw=0.0, score=1.0):
    return Box3D(center=(x, y, z), dims=(l, w, h), yaw=yaw, score=score)


finite_coord = st.floats(-50.0, 50.0)
dim = st.floats(0.5, 8.0)
angle = st.floats(-math.pi, math.pi)


@st.composite
def bev_boxes(draw):
    return BoxBEV(center=(draw(finite_coord), draw(finite_coord)),
                  dims=(draw(dim), draw(dim)), yaw=draw(angle))


@st.composite
def boxes_3d(draw):
    return Box3D(center=(draw(finite_coord), draw(finite_coord), draw(st.floats(-3.0, 3.0))),
                 dims=(draw(dim), draw(dim), draw(dim)), yaw=draw(angle))


class TestConstruction:
    def test_yaw_normalized_into_half_open_interval(self):
        assert Box3D((0, 0, 0), (1, 1, 1), 3 * math.pi).yaw == pytest.approx(math.pi)
        assert normalize_yaw(-math.pi) == pytest.approx(math.pi)
        assert normalize_yaw(0.3) == pytest.approx(0.3)

    def test_degenerate_dims_rejected(self):
        with pytest.raises(ValueError):
            Box3D((0, 0, 0), (1e-9, 1, 1), 0.0)
        with pytest.raises(ValueError):
            BoxBEV((0, 0), (1, 0.0), 0.0)

    def test_score_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            box3d(0, 0, 0, score=1.5)


class TestProjection:
    def test_drops_z_and_height(self):
        b = to_bev(Box3D((1, 2, 3), (4, 2, 1.5), 0.0))
        assert b.center == (1, 2)
        assert b.dims == (4, 2)
        assert b.yaw == 0.0

    def test_yaw_passthrough(self):
        assert to_bev(box3d(0, 0, 0, yaw=math.pi / 2)).yaw == pytest.approx(math.pi / 2)


class TestIoUBev:
    def test_identical_boxes(self):
        b = box_bev(3, -2, 4, 2, 0.7)
        assert iou_bev(b, b) == pytest.approx(1.0)

    def test_disjoint(self):
        assert iou_bev(box_bev(0, 0, 4, 2), box_bev(100, 0, 4, 2)) == 0.0

    def test_axis_aligned_half_shift(self):
        # boxes (0,0) and (2,0), both 4x2: intersection 2*2=4, union 8+8-4=12
        a = box_bev(0, 0, 4, 2)
        b = box_bev(2, 0, 4, 2)
        assert iou_bev(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_rotated_pair_matches_monte_carlo(self):
        rng = np.random.default_rng(7)
        a = box_bev(0.0, 0.0, 4.0, 2.0, 0.4)
        b = box_bev(1.0, 0.5, 3.0, 2.5, -0.9)
        estimate = monte_carlo_iou_bev(a, b, 1_000_000, rng)
        assert iou_bev(a, b) == pytest.approx(estimate, abs=1e-3)

    def test_containment(self):
        outer = box_bev(0, 0, 6, 6)
        inner = box_bev(0, 0, 2, 2, 0.3)
        # rotated inner box fully inside: intersection = inner area
        assert iou_bev(outer, inner) == pytest.approx(4.0 / 36.0, abs=1e-12)

    @settings(max_examples=150, deadline=None)
    @given(bev_boxes(), bev_boxes())
    def test_symmetric_and_bounded(self, a, b):
        v = iou_bev(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(iou_bev(b, a), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(bev_boxes())
    def test_self_iou_is_one(self, a):
        assert iou_bev(a, a) == pytest.approx(1.0, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(bev_boxes(), bev_boxes(), st.floats(-10, 10), st.floats(-10, 10), angle)
    def test_rigid_transform_invariance(self, a, b, tx, ty, theta):
        def move(box):
            c, s = math.cos(theta), math.sin(theta)
            x, y = box.center
            return BoxBEV(center=(c * x - s * y + tx, s * x + c * y + ty),
                          dims=box.dims, yaw=box.yaw + theta)

        assert iou_bev(move(a), move(b)) == pytest.approx(iou_bev(a, b), abs=1e-9)


class TestIoU3D:
    def test_identical(self):
        b = box3d(1, 2, 0.75, yaw=0.3)
        assert iou_3d(b, b) == pytest.approx(1.0)

    def test_disjoint_z(self):
        a = box3d(0, 0, 0.0, h=1.0)
        b = box3d(0, 0, 5.0, h=1.0)
        assert iou_3d(a, b) == 0.0

    def test_half_vertical_overlap(self):
        # same 4x2 footprint, unit height, centers offset 0.5 in z:
        # inter = 8*0.5 = 4, union = 8+8-4 = 12
        a = box3d(0, 0, 0.0, l=4, w=2, h=1.0)
        b = box3d(0, 0, 0.5, l=4, w=2, h=1.0)
        assert iou_3d(a, b) == pytest.approx(4.0 / 12.0, abs=1e-12)

    def test_volume_overlap_against_area_oracle(self):
        # BEV overlap known analytically (half shift), z overlap 0.6 of 1.0
        a = box3d(0, 0, 0.0, l=4, w=2, h=1.0)
        b = box3d(2, 0, 0.4, l=4, w=2, h=1.0)
        inter = 4.0 * 0.6
        union = 8.0 + 8.0 - inter
        assert iou_3d(a, b) == pytest.approx(inter / union, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(boxes_3d(), boxes_3d())
    def test_symmetric_and_bounded(self, a, b):
        v = iou_3d(a, b)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(iou_3d(b, a), abs=1e-12)


class TestCenterDistance:
    def test_same_center(self):
        assert center_distance_bev(box3d(1, 2, 3), box3d(1, 2, -4)) == 0.0

    def test_three_four_five(self):
        assert center_distance_bev(box3d(0, 0, 0), box3d(3, 4, 0)) == pytest.approx(5.0)

    @settings(max_examples=100, deadline=None)
    @given(boxes_3d(), boxes_3d())
    def test_matches_direct_formula(self, a, b):
        expected = math.sqrt((a.center[0] - b.center[0]) ** 2
                             + (a.center[1] - b.center[1]) ** 2)
        assert center_distance_bev(a, b) == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(boxes_3d(), boxes_3d(), boxes_3d())
    def test_triangle_inequality(self, a, b, c):
        assert (center_distance_bev(a, c)
                <= center_distance_bev(a, b) + center_distance_bev(b, c) + 1e-9)


class TestPolygonMachinery:
    def test_shoelace_unit_square(self):
        sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        assert polygon_area(sq) == pytest.approx(1.0)

    def test_corner_order_is_ccw(self):
        corners = bev_corners(box_bev(0, 0, 4, 2))
        x, y = corners[:, 0], corners[:, 1]
        signed = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
        assert signed > 0

    def test_intersection_area_commutes(self):
        a = box_bev(0, 0, 4, 2, 0.3)
        b = box_bev(1, 1, 3, 3, -0.5)
        assert intersection_area_bev(a, b) == pytest.approx(
            intersection_area_bev(b, a), abs=1e-12)
