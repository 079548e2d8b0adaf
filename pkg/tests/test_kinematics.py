import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pedeval.config import KalmanConfig, default_config
from pedeval.kinematics import kalman_smooth, summarize, walking_speed_summary
from pedeval.trajdata import Trajectory


def linear(v, n, fps, start=(0.0, 0.0), noise=0.0, seed=0):
    t = np.arange(n)[:, None] / fps
    pts = np.asarray(start) + t * np.asarray(v, float)
    if noise:
        pts = pts + np.random.default_rng(seed).normal(0, noise, pts.shape)
    return Trajectory(0, 0, pts)


def test_stationary_point_is_fixed():
    t = Trajectory(0, 0, np.tile([[3.0, -2.0]], (10, 1)))
    s = kalman_smooth(t, 10.0)
    np.testing.assert_allclose(s.positions, t.positions, atol=1e-12)
    assert np.linalg.norm(s.velocities, axis=1).max() < 1e-6


def test_linear_motion_speed_recovered():
    s = kalman_smooth(linear((1.2, 0.0), 50, 10.0), 10.0)
    speed = np.linalg.norm(s.velocities, axis=1)[3:-3]
    np.testing.assert_allclose(speed, 1.2, rtol=0.01)


def test_noisy_linear_motion_mean_speed():
    fps = 10.0
    errs = []
    for seed in range(10):
        s = kalman_smooth(linear((1.2, 0.5), 100, fps, noise=0.05, seed=seed), fps)
        errs.append(summarize(s, fps).mean_speed / 1.3 - 1)
    assert abs(np.mean(errs)) < 0.05


def test_single_frame_has_zero_velocity():
    s = kalman_smooth(Trajectory(0, 4, [[1.0, 2.0]]), 10.0)
    assert s.velocities.tolist() == [[0.0, 0.0]]
    k = summarize(s, 10.0)
    assert (k.mean_speed, k.mean_accel, k.path_length, k.is_stationary) == (0.0, 0.0, 0.0, True)


def test_two_frames_have_no_acceleration():
    k = summarize(kalman_smooth(linear((1.0, 0.0), 2, 10.0), 10.0), 10.0)
    assert k.mean_accel == 0.0
    assert k.mean_speed > 0


def test_smoothed_span_matches_source():
    t = Trajectory(5, 12, np.random.default_rng(0).normal(size=(17, 2)))
    s = kalman_smooth(t, 25.0)
    assert (s.agent_id, s.start_frame, s.length) == (5, 12, 17)
    assert np.all(np.isfinite(s.positions)) and np.all(np.isfinite(s.velocities))


def test_constant_velocity_summary():
    fps = 10.0
    k = summarize(kalman_smooth(linear((1.0, 0.0), 31, fps), fps), fps)
    assert k.mean_speed == pytest.approx(1.0, rel=0.01)
    assert k.path_length == pytest.approx(3.0, rel=1e-3)
    assert k.displacement == pytest.approx(3.0, rel=1e-3)
    assert not k.is_stationary


def test_noiseless_acceleration_vanishes_after_trimming():
    fps = 10.0
    s = kalman_smooth(linear((1.0, 0.4), 60, fps), fps)
    acc = np.linalg.norm(np.diff(s.velocities, axis=0), axis=1)[3:-3] * fps
    assert acc.mean() < 1e-3


def test_circle_is_stationary_with_full_path_length():
    theta = np.linspace(0, 2 * math.pi, 101)
    t = Trajectory(0, 0, np.column_stack([2 * np.cos(theta), 2 * np.sin(theta)]))
    k = summarize(kalman_smooth(t, 10.0), 10.0)
    assert k.is_stationary
    assert k.path_length == pytest.approx(4 * math.pi, rel=0.02)


def test_stationary_threshold_from_default_config():
    cfg = default_config()
    thr = cfg.metrics.stationary_threshold
    assert thr == 0.2
    for disp, expected in [(0.199, True), (0.2, False), (0.201, False)]:
        t = Trajectory(0, 0, [[0.0, 0.0], [disp / 2, 0.0], [disp, 0.0]])
        assert summarize(kalman_smooth(t, 10.0, cfg.kalman), 10.0, thr).is_stationary is expected


def test_stationarity_uses_raw_endpoints():
    # smoothing pulls the ends inwards; the raw displacement is what counts
    pts = np.array([[0.0, 0.0]] * 5 + [[0.21, 0.0]])
    k = summarize(kalman_smooth(Trajectory(0, 0, pts), 10.0), 10.0)
    assert k.displacement < 0.2
    assert not k.is_stationary


def test_kalman_noise_parameters():
    k = KalmanConfig()
    assert (k.sigma_accel, k.sigma_meas, k.init_vel_var) == (1.0, 0.1, 10.0)
    smooth = kalman_smooth(linear((1, 0), 30, 10, noise=0.1), 10, KalmanConfig(sigma_meas=1e3))
    rough = kalman_smooth(linear((1, 0), 30, 10, noise=0.1), 10, KalmanConfig(sigma_meas=1e-3))
    assert np.diff(smooth.velocities, axis=0).std() < np.diff(rough.velocities, axis=0).std()


def test_walking_speed_summary_skips_stationary():
    fps = 10.0
    moving = summarize(kalman_smooth(linear((1.3, 0), 30, fps), fps), fps)
    still = summarize(kalman_smooth(linear((0, 0), 30, fps), fps), fps)
    out = walking_speed_summary([moving, still])
    assert out["n"] == 1 and out["mean"] == moving.mean_speed
    assert walking_speed_summary([still]) == {"n": 0, "mean": None, "std": None}


rigid = st.tuples(st.floats(-100, 100), st.floats(-100, 100), st.floats(0, 2 * math.pi))


@given(rigid)
@settings(max_examples=30, deadline=None)
def test_speed_and_accel_invariant_to_rigid_motion(tf):
    dx, dy, a = tf
    base = np.random.default_rng(0).normal(size=(20, 2)).cumsum(axis=0) * 0.1
    R = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    k0 = summarize(kalman_smooth(Trajectory(0, 0, base), 10.0), 10.0)
    k1 = summarize(kalman_smooth(Trajectory(0, 0, base @ R.T + [dx, dy]), 10.0), 10.0)
    assert k1.mean_speed == pytest.approx(k0.mean_speed, rel=1e-6, abs=1e-9)
    assert k1.mean_accel == pytest.approx(k0.mean_accel, rel=1e-6, abs=1e-9)


@given(st.integers(2, 40), st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_path_length_dominates_displacement(n, seed):
    pts = np.random.default_rng(seed).normal(size=(n, 2))
    k = summarize(kalman_smooth(Trajectory(0, 0, pts), 10.0), 10.0)
    assert k.path_length >= k.displacement - 1e-9


def test_path_length_stable_under_doubled_fps():
    theta = np.linspace(0, math.pi, 41)
    pts = np.column_stack([5 * np.cos(theta), 5 * np.sin(theta)])
    fine_theta = np.linspace(0, math.pi, 81)
    fine = np.column_stack([5 * np.cos(fine_theta), 5 * np.sin(fine_theta)])
    d0 = summarize(kalman_smooth(Trajectory(0, 0, pts), 10.0), 10.0).path_length
    d1 = summarize(kalman_smooth(Trajectory(0, 0, fine), 20.0), 20.0).path_length
    assert d1 == pytest.approx(d0, rel=0.02)
