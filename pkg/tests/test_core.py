import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myoinr.core import (
    CaseRecord,
    LandmarkGrid,
    TagFrameSeries,
    denormalize_coords,
    make_landmark_grid,
    normalize_coords,
    normalize_time,
)


@pytest.mark.parametrize("pix, norm", [
    ((0, 0), (-1, -1)),
    ((127, 127), (1, 1)),
    ((63.5, 63.5), (0, 0)),
])
def test_normalize_examples(pix, norm):
    np.testing.assert_array_equal(normalize_coords(pix, 128), norm)


def test_denormalize_examples():
    np.testing.assert_array_equal(denormalize_coords((0, 0), 128), (63.5, 63.5))
    np.testing.assert_array_equal(denormalize_coords((-1, 1), 128), (0, 127))


def test_round_trip_random(rng):
    pts = rng.uniform(-20, 150, (1000, 2))
    back = denormalize_coords(normalize_coords(pts, 128), 128)
    assert np.max(np.abs(back - pts) / np.maximum(np.abs(pts), 1)) < 1e-12
    norm = rng.uniform(-1, 1, (1000, 2))
    again = normalize_coords(denormalize_coords(norm, 128), 128)
    assert np.max(np.abs(again - norm) / np.maximum(np.abs(norm), 1)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 1024), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_round_trip_property(size, x, y):
    p = np.array([x, y])
    back = denormalize_coords(normalize_coords(p, size), size)
    assert np.all(np.abs(back - p) <= 1e-12 * np.maximum(np.abs(p), 1) * size)


def test_normalize_errors():
    with pytest.raises(ValueError, match="empty input"):
        normalize_coords(np.zeros((0, 2)), 128)
    with pytest.raises(ValueError):
        normalize_coords((1, 1), 1)
    with pytest.raises(ValueError, match="empty input"):
        denormalize_coords([], 128)


def test_time_normalization():
    np.testing.assert_allclose(normalize_time([0, 19], 20), [0.0, 1.0])
    with pytest.raises(ValueError):
        normalize_time(0, 1)


def test_default_grid_has_168_points():
    g = make_landmark_grid((64, 64), 20, 32, 7, 24)
    assert g.points.shape == (1, 168, 2)


def test_small_grid_inner_ring():
    g = make_landmark_grid((0, 0), 1, 2, rings=2, spokes=4)
    np.testing.assert_allclose(g.points[0, :4], [(1, 0), (0, 1), (-1, 0), (0, -1)], atol=1e-15)


def test_ring_radii_uniform():
    c = np.array([60.0, 70.0])
    g = make_landmark_grid(c, 15, 35, rings=9, spokes=12)
    rho = np.linalg.norm(g.as_rings()[0] - c, axis=-1)[:, 0]
    assert np.max(np.abs(np.diff(rho) - (35 - 15) / 8)) < 1e-12


def test_spoke_rotation_preserves_distances():
    g = make_landmark_grid((64, 64), 20, 30, rings=3, spokes=10).as_rings()[0]
    rolled = np.roll(g, 3, axis=1)
    d = lambda p: np.sort(np.linalg.norm(p.reshape(-1, 1, 2) - p.reshape(1, -1, 2), axis=-1).ravel())
    np.testing.assert_allclose(d(g), d(rolled), atol=1e-12)


def test_grid_errors():
    with pytest.raises(ValueError):
        make_landmark_grid((0, 0), 2, 1)
    with pytest.raises(ValueError):
        LandmarkGrid(7, 24, np.zeros((2, 167, 2)))


def test_series_validation():
    with pytest.raises(ValueError):
        TagFrameSeries(np.full((3, 8, 8), 1.5))
    with pytest.raises(ValueError):
        TagFrameSeries(np.zeros((1, 8, 8)))
    s = TagFrameSeries(np.zeros((3, 8, 8)))
    assert s.frame_count == 3 and s.image_size == 8
    with pytest.raises(ValueError):
        s.frames[0, 0, 0] = 1.0


def test_case_landmarks_in_bounds():
    s = TagFrameSeries(np.zeros((2, 16, 16)))
    grid = make_landmark_grid((8, 8), 2, 4, 2, 4)
    pts = np.repeat(grid.points, 2, axis=0)
    CaseRecord(s, LandmarkGrid(2, 4, pts))
    with pytest.raises(ValueError):
        CaseRecord(s, LandmarkGrid(2, 4, pts + 20))
