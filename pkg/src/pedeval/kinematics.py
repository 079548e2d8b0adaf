"""Kalman/RTS smoothing of BEV tracks and per-agent kinematic summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import KalmanConfig
from .trajdata import Trajectory


@dataclass(frozen=True, eq=False)
class SmoothedTrajectory:
    agent_id: int
    start_frame: int
    positions: np.ndarray  # (L, 2) m
    velocities: np.ndarray  # (L, 2) m/s
    raw_start: np.ndarray
    raw_end: np.ndarray

    @property
    def length(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class KinematicSummary:
    agent_id: int
    mean_speed: float
    mean_accel: float
    path_length: float
    displacement: float
    is_stationary: bool


def _cv_model(dt: float, cfg: KalmanConfig):
    F = np.array([[1.0, dt], [0.0, 1.0]])
    q = cfg.sigma_accel**2
    Q = q * np.array([[dt**4 / 4, dt**3 / 2], [dt**3 / 2, dt**2]])
    return F, Q


def kalman_smooth(traj: Trajectory, fps: float, cfg: KalmanConfig | None = None) -> SmoothedTrajectory:
    """Constant-velocity Kalman filter followed by an RTS backward pass.

    x and y share the same noise model, so they share a covariance; only the
    means are carried per axis (state rows are [position, velocity], columns
    are the two axes).
    """
    cfg = cfg or KalmanConfig()
    z = np.asarray(traj.positions, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"agent {traj.agent_id}: non-finite positions")
    n = z.shape[0]
    if n == 1:
        return SmoothedTrajectory(
            traj.agent_id, traj.start_frame, z.copy(), np.zeros((1, 2)), z[0], z[-1]
        )

    dt = 1.0 / fps
    F, Q = _cv_model(dt, cfg)
    R = cfg.sigma_meas**2
    H = np.array([1.0, 0.0])

    means_f = np.empty((n, 2, 2))
    covs_f = np.empty((n, 2, 2))
    means_p = np.empty((n, 2, 2))
    covs_p = np.empty((n, 2, 2))

    x = np.array([z[0], [0.0, 0.0]])
    P = np.diag([R, cfg.init_vel_var])
    for k in range(n):
        if k > 0:
            x = F @ x
            P = F @ P @ F.T + Q
        means_p[k], covs_p[k] = x, P
        S = H @ P @ H + R
        gain = P @ H / S
        x = x + np.outer(gain, z[k] - H @ x)
        P = P - np.outer(gain, H @ P)
        means_f[k], covs_f[k] = x, P

    xs = means_f.copy()
    Ps = covs_f.copy()
    for k in range(n - 2, -1, -1):
        C = covs_f[k] @ F.T @ np.linalg.inv(covs_p[k + 1])
        xs[k] = means_f[k] + C @ (xs[k + 1] - means_p[k + 1])
        Ps[k] = covs_f[k] + C @ (Ps[k + 1] - covs_p[k + 1]) @ C.T

    return SmoothedTrajectory(
        agent_id=traj.agent_id,
        start_frame=traj.start_frame,
        positions=xs[:, 0, :],
        velocities=xs[:, 1, :],
        raw_start=z[0].copy(),
        raw_end=z[-1].copy(),
    )


def summarize(st: SmoothedTrajectory, fps: float, stationary_threshold: float = 0.2) -> KinematicSummary:
    L = st.length
    speeds = np.linalg.norm(st.velocities, axis=1)
    mean_speed = float(speeds[1:].mean()) if L >= 2 else 0.0
    if L >= 3:
        dv = np.linalg.norm(np.diff(st.velocities, axis=0)[1:], axis=1)
        mean_accel = float(dv.mean() * fps)
    else:
        mean_accel = 0.0
    steps = np.linalg.norm(np.diff(st.positions, axis=0), axis=1)
    raw_disp = float(np.linalg.norm(st.raw_end - st.raw_start))
    return KinematicSummary(
        agent_id=st.agent_id,
        mean_speed=mean_speed,
        mean_accel=mean_accel,
        path_length=float(steps.sum()),
        displacement=float(np.linalg.norm(st.positions[-1] - st.positions[0])),
        is_stationary=raw_disp < stationary_threshold,
    )


def walking_speed_summary(summaries) -> dict:
    """Mean and spread of average speed over agents that are not stationary."""
    speeds = np.array([s.mean_speed for s in summaries if not s.is_stationary])
    if speeds.size == 0:
        return {"n": 0, "mean": None, "std": None}
    return {
        "n": int(speeds.size),
        "mean": float(speeds.mean()),
        "std": float(speeds.std(ddof=1)) if speeds.size > 1 else 0.0,
    }
