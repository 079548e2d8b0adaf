"""Forward-rendered pinhole scene with a flat ground at z = 0.

The camera looks down onto the ground; relative depth is the true depth
divided by a planted scale, and camera translations are stored in the same
relative units. Pedestrians are boxes spanning the projected foot and head.
"""

import math
from dataclasses import dataclass

import numpy as np

from pedeval.geometry import CameraFrame, DepthRaster, dump_cameras, write_pfm
from pedeval.trajdata import format_tracklets, make_tracklets

WIDTH, HEIGHT = 320, 240
FOCAL = 250.0


def camera_rotation(pitch_deg):
    """World-from-camera rotation for a camera facing +y, tilted down."""
    p = math.radians(pitch_deg)
    right = np.array([1.0, 0.0, 0.0])
    forward = np.array([0.0, math.cos(p), -math.sin(p)])
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward])


def ground_depth(R, centre):
    """Camera-frame depth of the z = 0 ground for every pixel; 0 above the horizon."""
    u, v = np.meshgrid(np.arange(WIDTH, dtype=float), np.arange(HEIGHT, dtype=float))
    rays = np.stack([(u - WIDTH / 2) / FOCAL, (v - HEIGHT / 2) / FOCAL, np.ones_like(u)], axis=-1)
    dz = rays @ R[2]
    with np.errstate(divide="ignore"):
        s = np.where(dz < -1e-6, -centre[2] / dz, 0.0)
    return s


def project(R, centre, pts):
    cam = (np.asarray(pts, float) - centre) @ R
    return np.column_stack([FOCAL * cam[:, 0] / cam[:, 2] + WIDTH / 2,
                            FOCAL * cam[:, 1] / cam[:, 2] + HEIGHT / 2]), cam[:, 2]


@dataclass
class Rendered:
    tracklets: object
    cams: dict
    rel: dict
    metric: dict
    truth: dict  # track id -> (frames, xy)
    fps: float
    scale: float


def render(
    scale=2.5,
    person_height=1.7,
    speed=1.3,
    n_agents=6,
    n_frames=40,
    fps=10.0,
    pitch_deg=35.0,
    cam_height=6.0,
    cam_velocity=(0.0, 0.0, 0.0),
    outlier_fraction=0.2,
    seed=0,
):
    rng = np.random.default_rng(seed)
    R = camera_rotation(pitch_deg)
    starts, vels = [], []
    for i in range(n_agents):
        y = 9.0 + 1.2 * i
        heading = 1.0 if i % 2 == 0 else -1.0
        starts.append((-2.5 * heading + rng.uniform(-0.3, 0.3), y))
        ang = rng.uniform(-0.3, 0.3)
        vels.append((heading * speed * math.cos(ang), speed * math.sin(ang)))
    starts, vels = np.array(starts), np.array(vels)

    cams, rel, metric, rows = {}, {}, {}, []
    truth = {i: ([], []) for i in range(n_agents)}
    for f in range(n_frames):
        t = f / fps
        centre = np.array([0.0, 0.0, cam_height]) + np.asarray(cam_velocity) * t
        cams[f] = CameraFrame(f, FOCAL, FOCAL, WIDTH / 2, HEIGHT / 2, R, centre / scale)
        depth = ground_depth(R, centre)
        rel[f] = DepthRaster((depth / scale).astype(np.float32))
        if f % 8 == 0:
            noisy = depth.copy()
            bad = (rng.random(depth.shape) < outlier_fraction) & (depth > 0)
            noisy[bad] += rng.uniform(5.0, 30.0, bad.sum())
            metric[f] = DepthRaster(noisy.astype(np.float32))
        for i in range(n_agents):
            xy = starts[i] + vels[i] * t
            foot = np.array([xy[0], xy[1], 0.0])
            head = foot + [0.0, 0.0, person_height]
            (uf, vf), = project(R, centre, foot[None])[0]
            (uh, vh), = project(R, centre, head[None])[0]
            h = vf - vh
            w = 0.4 * h
            if uf - w / 2 < 0 or uf + w / 2 > WIDTH or vh < 0 or vf > HEIGHT - 1:
                continue
            rows.append((f, i, uf - w / 2, vf - h, w, h, 0.9))
            truth[i][0].append(f)
            truth[i][1].append(xy)
    tracklets = make_tracklets(rows, (WIDTH, HEIGHT))
    truth = {k: (np.array(a), np.array(b)) for k, (a, b) in truth.items() if a}
    return Rendered(tracklets, cams, rel, metric, truth, fps, scale)


def write_render(tmp_path, r):
    (tmp_path / "rel").mkdir()
    (tmp_path / "met").mkdir()
    for f, d in r.rel.items():
        (tmp_path / "rel" / f"{f:05d}.pfm").write_bytes(write_pfm(d))
    for f, d in r.metric.items():
        (tmp_path / "met" / f"{f:05d}.pfm").write_bytes(write_pfm(d))
    (tmp_path / "cams.json").write_text(dump_cameras(r.cams.values()))
    (tmp_path / "tracks.txt").write_text(format_tracklets(r.tracklets))


def reconstruct_args(tmp_path, out):
    return ["reconstruct-t2v", "--tracklets", tmp_path / "tracks.txt", "--cameras", tmp_path / "cams.json",
            "--depth-dir", tmp_path / "rel", "--metric-depth-dir", tmp_path / "met",
            "--fps", "10", "--image-size", f"{WIDTH}x{HEIGHT}", "--out", out]
