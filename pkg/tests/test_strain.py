import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myoinr.core import LandmarkGrid, make_landmark_grid
from myoinr.strain import (
    agreement,
    aggregate_slices,
    end_systole_index,
    gcs,
    grs,
    local_strain,
    point_rmse,
    strain_report,
)
from myoinr.synth import THICKENING, AnalyticDeformation, analytic_strain, trajectories


def _grid(points, like):
    return LandmarkGrid(like.rings, like.spokes, points)


def _rigid(points, angle, shift, pivot=(0.0, 0.0)):
    R = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    p = np.asarray(pivot)
    return (points - p) @ R.T + p + np.asarray(shift)


def test_local_strain_examples():
    assert local_strain(10, 8) == pytest.approx(-0.2, abs=1e-15)
    assert local_strain(10, 10) == 0.0
    assert local_strain(10, 12) == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(ValueError):
        local_strain(0, 1)


ED = make_landmark_grid((64, 60), 18, 31)


def test_uniform_scaling():
    c = np.array([64.0, 60.0])
    es08 = _grid(c + 0.8 * (ED.points - c), ED)
    es12 = _grid(c + 1.2 * (ED.points - c), ED)
    assert gcs(ED, es08)[0] == pytest.approx(-0.2, abs=1e-14)
    assert grs(ED, es12)[0] == pytest.approx(0.2, abs=1e-14)
    assert gcs(ED, ED)[0] == 0.0 and grs(ED, ED)[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.5, 1.5), st.floats(-50, 50), st.floats(-50, 50))
def test_scaling_about_any_point(s, px, py):
    p = np.array([px, py])
    es = _grid(p + s * (ED.points - p), ED)
    assert gcs(ED, es)[0] == pytest.approx(s - 1, abs=1e-12)
    assert grs(ED, es)[0] == pytest.approx(s - 1, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(-30, 30), st.floats(-30, 30))
def test_rigid_motion_zero_strain(angle, dx, dy):
    es = _grid(_rigid(ED.points, angle, (dx, dy), (64, 60)), ED)
    assert abs(gcs(ED, es)[0]) < 1e-12
    assert abs(grs(ED, es)[0]) < 1e-12


def test_pair_counts():
    assert gcs(ED, ED)[1].shape == (7 * 24,)
    assert grs(ED, ED)[1].shape == (6 * 24,)


def test_topology_mismatch():
    other = make_landmark_grid((64, 60), 18, 31, rings=6, spokes=28)
    with pytest.raises(ValueError, match="topology"):
        gcs(ED, other)
    with pytest.raises(ValueError, match="topology"):
        grs(ED, other)


def _analytic_case(d, frames=20, size=128):
    center = (np.asarray(d.center) + 1) * (size - 1) / 2
    grid0 = make_landmark_grid(center, 18, 31)
    return grid0, trajectories(d, grid0, frames, size)


@pytest.mark.parametrize("d", [
    AnalyticDeformation(center=(0.02, -0.03), k_max=0.03, twist=0.1, t_es=0.35, s_end=0.05,
                        drift=(0.01, -0.02)),
    AnalyticDeformation(center=(0.0, 0.0), k_max=0.05, t_es=0.4),
])
def test_pipeline_matches_analytic_oracle(d):
    grid0, traj = _analytic_case(d)
    for k in range(1, 20):
        oracle = analytic_strain(d, grid0, k / 19)
        g, per_c = gcs(traj, traj, 0, k)
        r, per_r = grs(traj, traj, 0, k)
        assert abs(g - oracle.gcs) < 1e-9 and abs(r - oracle.grs) < 1e-9
        np.testing.assert_allclose(per_c, oracle.circ, atol=1e-9)
        np.testing.assert_allclose(per_r, oracle.rad, atol=1e-9)


def test_wall_thickening_positive_grs():
    d = AnalyticDeformation(center=(0.0, 0.0), mode=THICKENING, thickening=0.3, t_es=0.35,
                            r_epi=31 * 2 / 127, twist=0.05)
    grid0, traj = _analytic_case(d)
    es = end_systole_index(deformation=d, frame_count=20)
    r, _ = grs(traj, traj, 0, es)
    oracle = analytic_strain(d, grid0, es / 19)
    assert r > 0
    assert abs(r - oracle.grs) < 1e-9


def test_point_rmse_examples():
    a = LandmarkGrid(2, 3, np.zeros((2, 6, 2)))
    assert point_rmse(a, a) == 0.0
    b_pts = np.zeros((2, 6, 2))
    b_pts[1, 0] = (3, 4)
    b = LandmarkGrid(2, 3, b_pts)
    assert point_rmse(b, a, skip_reference=True) == pytest.approx(5 / np.sqrt(6))
    single = LandmarkGrid(2, 3, np.zeros((1, 6, 2)) + (3, 4))
    zero = LandmarkGrid(2, 3, np.zeros((1, 6, 2)))
    assert point_rmse(single, zero, 1.0) == pytest.approx(5.0)
    # two points at distances 0 and 5
    p = np.zeros((1, 2, 2))
    q = np.array([[[0, 0], [3, 4]]], dtype=float)
    rms = np.sqrt(np.mean(np.sum((p - q) ** 2, -1)))
    assert rms == pytest.approx(np.sqrt(12.5))


def test_point_rmse_symmetric_and_linear(rng):
    a = LandmarkGrid(7, 24, rng.normal(size=(5, 168, 2)))
    b = LandmarkGrid(7, 24, rng.normal(size=(5, 168, 2)))
    assert point_rmse(a, b) == point_rmse(b, a)
    assert point_rmse(a, b, 2.5) == pytest.approx(2.5 * point_rmse(a, b), rel=1e-14)
    with pytest.raises(ValueError):
        point_rmse(a, LandmarkGrid(7, 24, np.zeros((4, 168, 2))))


def test_agreement_examples(rng):
    x = rng.normal(size=10)
    s = agreement(x, x)
    assert (s.bias, s.sd, s.error) == (0.0, 0.0, 0.0)
    s = agreement([0.01, -0.01], [0.0, 0.0])
    assert s.bias == pytest.approx(0, abs=1e-15) and s.error == pytest.approx(1.0)
    s = agreement([0.02, 0.02], [0.0, 0.0])
    assert s.bias == pytest.approx(2.0) and s.sd == pytest.approx(0, abs=1e-15) and s.error == pytest.approx(2.0)
    with pytest.raises(ValueError):
        agreement([1, 2], [1])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=20), st.lists(st.floats(-1, 1), min_size=1, max_size=20))
def test_agreement_bias_bounded_by_error(p, r):
    n = min(len(p), len(r))
    s = agreement(p[:n], r[:n])
    assert s.error >= 0 and abs(s.bias) <= s.error + 1e-12


def test_end_systole_from_generator_truth():
    d = AnalyticDeformation(center=(0.0, 0.0), k_max=0.04, twist=0.08, t_es=0.35)
    _, traj = _analytic_case(d)
    assert end_systole_index(deformation=d, frame_count=20) == 7
    assert end_systole_index(traj) == 7


def test_end_systole_identity_and_boundary():
    still = LandmarkGrid(7, 24, np.repeat(ED.points, 5, axis=0))
    assert end_systole_index(still) == 0
    c = np.array([64.0, 60.0])
    shrink = np.stack([c + s * (ED.points[0] - c) for s in np.linspace(1, 0.8, 6)])
    assert end_systole_index(LandmarkGrid(7, 24, shrink)) == 5


def test_strain_report_and_slices():
    c = np.array([64.0, 60.0])
    pts = np.stack([c + s * (ED.points[0] - c) for s in (1.0, 0.9, 0.8, 0.85)])
    rep = strain_report(LandmarkGrid(7, 24, pts))
    assert rep.end_systole_frame == 2
    assert rep.gcs == pytest.approx(-0.2) and rep.gcs == pytest.approx(rep.per_pair_circ.mean())
    assert rep.grs == pytest.approx(rep.per_pair_rad.mean())
    assert aggregate_slices({"a": [0.1, 0.2, 0.3]}) == {"a": pytest.approx(0.2)}
