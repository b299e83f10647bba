import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckg_traffic.errors import DegenerateGeometry
from ckg_traffic.geometry import (BufferRaster, buffer_land_ratio, point_polyline_distance,
                                  point_segment_distance, polyline_midpoint)


def test_point_segment_distance_cases():
    a, b = np.array([0.0, 0.0]), np.array([10.0, 0.0])
    assert point_segment_distance(np.array([5.0, 3.0]), a, b) == 3.0
    assert point_segment_distance(np.array([13.0, 4.0]), a, b) == 5.0
    assert point_segment_distance(np.array([3.0, 4.0]), a, a) == 5.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_polyline_distance_matches_dense_sampling(x, y):
    line = np.array([[0.0, 0.0], [20.0, 0.0], [20.0, 15.0]])
    ts = np.linspace(0, 1, 4001)[:, None]
    dense = np.vstack([line[0] + ts * (line[1] - line[0]), line[1] + ts * (line[2] - line[1])])
    oracle = np.hypot(dense[:, 0] - x, dense[:, 1] - y).min()
    assert point_polyline_distance(np.array([x, y]), line) == pytest.approx(oracle, abs=0.02)


def test_bad_polyline():
    with pytest.raises(DegenerateGeometry):
        point_polyline_distance(np.zeros(2), np.zeros((0, 2)))


def test_midpoint():
    np.testing.assert_allclose(polyline_midpoint(np.array([[0, 0], [10, 0], [10, 10]])), [10, 0])


def test_full_cover_ratio_is_one():
    line = np.array([[0.0, 0.0], [30.0, 0.0]])
    assert buffer_land_ratio(line, (-100, -100, 100, 100), 20.0) == 1.0


def test_disjoint_ratio_is_zero():
    line = np.array([[0.0, 0.0], [30.0, 0.0]])
    assert buffer_land_ratio(line, (200, 200, 300, 300), 20.0) == 0.0


def test_half_plane_through_point_like_road():
    # analytic half disk: area ratio 1/2
    road = np.array([[0.0, 0.0], [0.0, 0.0]])
    ratio = buffer_land_ratio(road, (0.0, -500.0, 500.0, 500.0), 50.0)
    assert abs(ratio - 0.5) <= 0.01


def test_quarter_disk_ratio():
    road = np.array([[0.0, 0.0], [0.0, 0.0]])
    ratio = buffer_land_ratio(road, (0.0, 0.0, 500.0, 500.0), 80.0)
    assert abs(ratio - 0.25) <= 0.01


def test_raster_buffer_area_close_to_capsule():
    line = np.array([[0.0, 0.0], [40.0, 0.0]])
    r = BufferRaster(line, 20.0)
    cap = 40 * 40 + np.pi * 20 ** 2
    assert r.buffer_pixels([20.0])[0] == pytest.approx(cap, rel=0.01)


def test_degenerate_rect_and_distance():
    line = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(DegenerateGeometry):
        buffer_land_ratio(line, (0, 0, 0, 5), 10.0)
    with pytest.raises(DegenerateGeometry):
        buffer_land_ratio(line, (0, 0, 5, 5), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-60, 60), st.floats(-60, 60), st.floats(5, 80), st.floats(5, 80))
def test_ratio_in_unit_interval(x0, y0, w, h):
    line = np.array([[0.0, 0.0], [25.0, 10.0]])
    assert 0.0 <= buffer_land_ratio(line, (x0, y0, x0 + w, y0 + h), 30.0) <= 1.0
