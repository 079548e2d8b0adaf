import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pedeval.config import default_config
from pedeval.geometry import (
    CameraFrame,
    DepthRaster,
    GeometryError,
    Homography,
    anthropometric_correction,
    dump_cameras,
    estimate_scale,
    fit_ground_plane,
    huber_scale,
    interpolate_scales,
    load_cameras,
    person_height,
    project_homography,
    project_to_pixels,
    read_pfm,
    sample_depth,
    staticity_check,
    unproject_to_world,
    write_pfm,
)
from render_fixture import camera_rotation
from synthetic import gross_outlier_pair, symmetric_outlier_pair


def rot_z(deg):
    a = math.radians(deg)
    return np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])


# --- homography ------------------------------------------------------------

def test_identity_homography():
    xy, ok = project_homography(Homography(np.eye(3)), [[3.0, 4.0]])
    assert ok.all() and xy.tolist() == [[3.0, 4.0]]


def test_scaling_homography_example():
    xy, _ = project_homography(Homography(np.diag([0.02, 0.02, 1.0])), [[100.0, 50.0]])
    np.testing.assert_allclose(xy, [[2.0, 1.0]], rtol=0, atol=1e-15)


def test_homography_round_trip():
    rng = np.random.default_rng(0)
    H = Homography(np.array([[0.03, 0.001, -4], [0.0005, 0.05, -2], [1e-5, 2e-4, 1]]))
    px = rng.uniform(0, 600, size=(50, 2))
    world, ok = project_homography(H, px)
    back, ok2 = project_homography(H.inverse(), world)
    assert ok.all() and ok2.all()
    np.testing.assert_allclose(back, px, atol=1e-8)


@given(st.floats(0.1, 10.0), st.booleans())
@settings(max_examples=50)
def test_homography_invariant_to_homogeneous_scaling(c, negate):
    c = -c if negate else c
    H = np.array([[0.03, 0.001, -4], [0.0005, 0.05, -2], [1e-5, 2e-4, 1]])
    px = np.random.default_rng(1).uniform(0, 600, size=(20, 2))
    a, _ = project_homography(Homography(H), px)
    b, _ = project_homography(Homography(c * H), px)
    np.testing.assert_allclose(b, a, rtol=1e-12, atol=1e-12)


def test_points_at_infinity_dropped():
    H = Homography(np.array([[1, 0, 0], [0, 1, 0], [0, 1, -10.0]]))
    xy, ok = project_homography(H, [[0, 10], [0, 0]])
    assert ok.tolist() == [False, True]
    assert xy.shape == (1, 2)


def test_singular_homography_rejected():
    with pytest.raises(GeometryError):
        Homography(np.ones((3, 3)))
    with pytest.raises(GeometryError):
        Homography.from_text("1 0 0 0 1 0 0 0")


def test_homography_from_text():
    h = Homography.from_text("0.02 0 0\n0 0.02 0\n0 0 1\n")
    assert h.H[0, 0] == 0.02


# --- cameras and depth -----------------------------------------------------

def test_camera_requires_rotation():
    with pytest.raises(GeometryError):
        CameraFrame(0, 100, 100, 50, 50, np.diag([1, 1, 2.0]), np.zeros(3))
    with pytest.raises(GeometryError):
        CameraFrame(0, -1, 100, 50, 50, np.eye(3), np.zeros(3))


def test_camera_json_round_trip():
    cams = [CameraFrame(k, 500, 510, 320, 240, rot_z(10 * k), [k, 2.0, 3.0]) for k in range(3)]
    back = load_cameras(dump_cameras(cams))
    assert sorted(back) == [0, 1, 2]
    np.testing.assert_array_equal(back[2].R, cams[2].R)
    assert back[1].fy == 510


def test_pfm_round_trip_and_row_order():
    grid = np.arange(12, dtype=np.float32).reshape(3, 4)
    data = write_pfm(DepthRaster(grid))
    assert data.startswith(b"Pf\n4 3\n-1.0\n")
    # first stored row is the bottom image row
    first = np.frombuffer(data[len(b"Pf\n4 3\n-1.0\n"):], "<f4", count=4)
    assert first.tolist() == [8, 9, 10, 11]
    np.testing.assert_array_equal(read_pfm(data).values, grid)


def test_big_endian_pfm():
    grid = np.array([[1.5, 2.5]], dtype=">f4")
    r = read_pfm(b"Pf\n2 1\n1.0\n" + grid.tobytes())
    assert r.values.tolist() == [[1.5, 2.5]]


def test_sample_depth_bilinear():
    d = DepthRaster(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert sample_depth(d, 0.5, 0.5) == 2.5
    assert sample_depth(d, 1.0, 0.0) == 2.0


def test_sample_depth_nearest_valid_fallback():
    vals = np.zeros((10, 10))
    vals[5, 8] = 7.0
    d = DepthRaster(vals)
    assert sample_depth(d, 5.0, 5.0, radius=3) == 7.0
    assert sample_depth(d, 4.0, 5.0, radius=3) is None


# --- scale alignment -------------------------------------------------------

def test_exact_scale():
    rel = DepthRaster(np.random.default_rng(0).uniform(1, 5, (20, 20)))
    est = estimate_scale(rel, rel.scaled(2.5))
    assert est.accepted
    assert est.scale == pytest.approx(2.5, rel=1e-12)
    assert est.inlier_fraction == 1.0


@pytest.mark.parametrize("lam", [0.5, 2.5, 10.0])
def test_scale_recovered_under_gross_outliers(lam):
    est = estimate_scale(*gross_outlier_pair(lam))
    assert est.accepted
    assert est.scale == pytest.approx(lam, rel=0.01)


def test_huber_scale_downweights_outlier():
    rel = np.ones(20)
    met = np.full(20, 2.0)
    met[0] = 100.0
    assert abs(huber_scale(rel, met, 0.5) - 2.0) < abs(np.dot(rel, met) / 20 - 2.0)


def test_pixel_count_boundary_from_default_config():
    g = default_config().geometry
    assert g.min_valid_pixels == 100
    rel = np.full((10, 10), 2.0)
    rel[0, 0] = 0.0  # one invalid pixel leaves 99
    assert not estimate_scale(DepthRaster(rel), DepthRaster(rel * 3), g).accepted
    rel[0, 0] = 2.0
    assert estimate_scale(DepthRaster(rel), DepthRaster(rel * 3), g).accepted


def test_inlier_fraction_boundary_from_default_config():
    g = default_config().geometry
    assert g.min_inlier_fraction == 0.30
    low = estimate_scale(*symmetric_outlier_pair(2.0, 0.29), g)
    ok = estimate_scale(*symmetric_outlier_pair(2.0, 0.30), g)
    assert not low.accepted and low.inlier_fraction == pytest.approx(0.29)
    assert ok.accepted and ok.inlier_fraction == 0.30
    assert ok.scale == pytest.approx(2.0, rel=1e-12)


def test_residual_threshold_boundary_from_default_config():
    g = default_config().geometry
    assert g.residual_fraction == 0.10
    # true scale 1, median metric depth 10, so the inlier band is 1.0 m wide;
    # the outer groups are smaller so no shifted scale ties the true one
    offsets = np.repeat([0.0, 0.95, -0.95, 1.05, -1.05], [500, 150, 150, 100, 100])
    met = 10.0 + offsets
    rel = np.full(met.size, 10.0)
    est = estimate_scale(DepthRaster(rel.reshape(20, 50)), DepthRaster(met.reshape(20, 50)), g)
    assert est.scale == pytest.approx(1.0, abs=1e-9)
    assert est.inlier_fraction == pytest.approx(0.8)


def test_shape_mismatch_raises():
    with pytest.raises(GeometryError):
        estimate_scale(DepthRaster(np.ones((3, 3))), DepthRaster(np.ones((3, 4))))


def test_interpolate_scales_between_keyframes():
    s = interpolate_scales([0, 8, 16], [1.0, 2.0, 4.0], [0, 4, 8, 12, 20])
    assert s.tolist() == [1.0, 1.5, 2.0, 3.0, 4.0]


# --- un-projection and heights ---------------------------------------------

def test_unproject_inverts_projection():
    R = rot_z(5) @ camera_rotation(30.0)
    cam = CameraFrame(0, 400, 420, 160, 120, R, [0.3, -0.2, 1.5])
    scale = 2.0
    world = np.array([[0.5, 8.0, 0.2], [-1.0, 10.0, 0.0], [2.0, 12.0, -0.5]])
    uv, z = project_to_pixels(cam, scale, world)
    depth = np.zeros((240, 320))
    for (u, v), zz in zip(uv, z):
        r, c = int(v), int(u)
        depth[r - 1 : r + 3, c - 1 : c + 3] = zz / scale
    got, ok = unproject_to_world(cam, scale, DepthRaster(depth), uv)
    assert ok.all()
    np.testing.assert_allclose(got, world, atol=1e-9)


def test_unproject_drops_points_without_depth():
    cam = CameraFrame(0, 400, 400, 160, 120, np.eye(3), np.zeros(3))
    got, ok = unproject_to_world(cam, 1.0, DepthRaster(np.zeros((240, 320))), [[10.0, 10.0]])
    assert not ok[0] and np.isnan(got).all()


def test_person_height_example():
    assert person_height(170, 10.0, 1000.0) == pytest.approx(1.7)


@pytest.mark.parametrize("planted,corrected", [(1.0, True), (1.6, False), (3.4, True)])
def test_anthropometric_correction(planted, corrected):
    rng = np.random.default_rng(0)
    h = planted + rng.normal(0, 0.05, 200)
    h += planted - h.mean()
    scales = np.linspace(1.0, 2.0, 10)
    res = anthropometric_correction(h, scales)
    assert res.corrected is corrected
    if corrected:
        assert abs(res.mean_after - 1.7) <= 1e-9
        np.testing.assert_allclose(res.scales, scales * 1.7 / res.mean_before)
    else:
        np.testing.assert_array_equal(res.scales, scales)


def test_anthropometric_correction_is_idempotent():
    heights = np.random.default_rng(5).uniform(2.5, 4.0, 100)
    once = anthropometric_correction(heights, np.ones(8))
    twice = anthropometric_correction(heights * once.factor, once.scales)
    assert not twice.corrected
    np.testing.assert_array_equal(twice.scales, once.scales)


def test_anthropometric_band_is_open_from_default_config():
    g = default_config().geometry
    assert (g.height_min, g.height_max, g.height_target) == (1.4, 2.0, 1.7)
    assert anthropometric_correction([1.4], [1.0], g.height_min, g.height_max).corrected
    assert anthropometric_correction([2.0], [1.0], g.height_min, g.height_max).corrected
    assert not anthropometric_correction([1.41], [1.0], g.height_min, g.height_max).corrected


def test_anthropometric_ignores_missing_heights():
    res = anthropometric_correction([np.nan, 3.4, np.nan], [1.0])
    assert res.factor == pytest.approx(0.5)
    with pytest.raises(GeometryError):
        anthropometric_correction([np.nan], [1.0])


# --- ground plane ----------------------------------------------------------

def test_ground_plane_recovers_tilted_plane_with_outliers():
    rng = np.random.default_rng(4)
    normal = np.array([0.1, -0.2, 1.0])
    normal /= np.linalg.norm(normal)
    xy = rng.uniform(-10, 10, (300, 2))
    z = -(normal[0] * xy[:, 0] + normal[1] * xy[:, 1]) / normal[2] + 3.0
    pts = np.column_stack([xy, z])
    pts[:40, 2] += rng.uniform(1, 5, 40)
    plane = fit_ground_plane(pts, rng=rng)
    assert abs(np.dot(plane.normal, normal)) == pytest.approx(1.0, abs=1e-9)
    assert plane.inliers[40:].all() and not plane.inliers[:40].any()
    np.testing.assert_allclose(plane.residuals(pts[40:]), 0, atol=1e-9)


def test_bev_preserves_in_plane_distances():
    rng = np.random.default_rng(1)
    xy = rng.uniform(-5, 5, (50, 2))
    pts = np.column_stack([xy, np.full(50, 2.0)])
    bev = fit_ground_plane(pts, up=[0, 0, 1]).to_bev(pts)
    d0 = np.linalg.norm(xy[:, None] - xy[None], axis=2)
    d1 = np.linalg.norm(bev[:, None] - bev[None], axis=2)
    np.testing.assert_allclose(d0, d1, atol=1e-9)


def test_collinear_ground_points_rejected():
    pts = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
    with pytest.raises(GeometryError):
        fit_ground_plane(pts)


# --- staticity -------------------------------------------------------------

def cams_moving(step_t, step_deg, n=5):
    return [CameraFrame(k, 500, 500, 320, 240, rot_z(step_deg * k), [step_t * k, 0, 0]) for k in range(n)]


def test_staticity_thresholds_from_default_config():
    g = default_config().geometry
    assert (g.static_max_translation, g.static_max_rotation_deg) == (0.05, 0.5)
    assert staticity_check(cams_moving(0.049, 0.0), None, g.static_max_translation, g.static_max_rotation_deg)
    assert not staticity_check(cams_moving(0.051, 0.0), None, g.static_max_translation, g.static_max_rotation_deg)
    assert staticity_check(cams_moving(0.0, 0.49), None, g.static_max_translation, g.static_max_rotation_deg)
    assert not staticity_check(cams_moving(0.0, 0.51), None, g.static_max_translation, g.static_max_rotation_deg)


def test_staticity_uses_metric_scale():
    cams = cams_moving(0.02, 0.0)
    assert staticity_check(cams, scales=1.0)
    assert not staticity_check(cams, scales=3.0)


@given(st.floats(0.01, 5.0), st.floats(1.0, 50.0), st.floats(100, 2000))
@settings(max_examples=50)
def test_height_scales_linearly_with_depth(h_px, z, fy):
    assert person_height(h_px, 2 * z, fy) == pytest.approx(2 * person_height(h_px, z, fy))
