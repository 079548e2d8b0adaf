"""Projective geometry for turning pixel tracks into metric ground positions.

Two routes exist. With a known ground homography, pixels map straight to
the plane. Without one, per-frame cameras and an up-to-scale depth map are
aligned to a metric depth map, checked against typical human height and
un-projected into 3-D, where a ground plane is fitted.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import GeometryConfig


class GeometryError(ValueError):
    pass


# --------------------------------------------------------------------------
# Homography

@dataclass(frozen=True, eq=False)
class Homography:
    """World-from-pixel 3x3 matrix."""

    H: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=float).reshape(3, 3)
        if not np.all(np.isfinite(H)):
            raise GeometryError("homography has non-finite entries")
        scale = np.abs(H).max()
        if scale == 0 or abs(np.linalg.det(H / scale)) < 1e-12:
            raise GeometryError("homography is singular")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @classmethod
    def from_text(cls, text: str) -> Homography:
        try:
            values = [float(v) for v in text.split()]
        except ValueError as exc:
            raise GeometryError(f"bad homography file: {exc}") from None
        if len(values) != 9:
            raise GeometryError(f"homography needs 9 values, got {len(values)}")
        return cls(np.array(values).reshape(3, 3))

    def inverse(self) -> Homography:
        return Homography(np.linalg.inv(self.H))


def project_homography(h: Homography, pts, min_w: float = 1e-12):
    """Map pixel points ``(n, 2)`` to the ground plane.

    Returns ``(xy, valid)``: ``xy`` holds only the valid points, ``valid`` is
    the mask over the input (points at infinity, ``|w| < min_w``, are dropped).
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ h.H.T
    w = hom[:, 2]
    valid = np.abs(w) >= min_w
    xy = hom[valid, :2] / w[valid, None]
    return xy, valid


# --------------------------------------------------------------------------
# Cameras and depth

@dataclass(frozen=True, eq=False)
class CameraFrame:
    """Pinhole camera; ``R`` and ``t`` map camera to world coordinates."""

    frame: int
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"frame {self.frame}: focal lengths must be positive")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise GeometryError(f"frame {self.frame}: R is not a rotation")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)


def load_cameras(text: str) -> dict[int, CameraFrame]:
    """Parse a JSON array of ``{frame, fx, fy, cx, cy, R, t}`` objects."""
    try:
        items = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GeometryError(f"bad camera JSON: {exc}") from None
    cams = {}
    for item in items:
        try:
            cam = CameraFrame(
                frame=int(item["frame"]),
                fx=float(item["fx"]),
                fy=float(item["fy"]),
                cx=float(item["cx"]),
                cy=float(item["cy"]),
                R=item["R"],
                t=item["t"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise GeometryError(f"bad camera entry: {exc}") from None
        cams[cam.frame] = cam
    return cams


def dump_cameras(cams) -> str:
    items = [
        {
            "frame": c.frame, "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
            "R": c.R.ravel().tolist(), "t": c.t.tolist(),
        }
        for c in sorted(cams, key=lambda c: c.frame)
    ]
    return json.dumps(items)


@dataclass(frozen=True, eq=False)
class DepthRaster:
    """Row-major depth grid; a pixel is valid when its value is finite and > 0."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise GeometryError(f"depth raster must be 2-D, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def mask(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.isfinite(self.values) & (self.values > 0)

    def scaled(self, factor: float) -> DepthRaster:
        return DepthRaster(self.values * factor)


def read_pfm(data: bytes) -> DepthRaster:
    """Decode a single-channel PFM; rows are stored bottom to top."""
    m = re.match(rb"Pf\s+(\d+)\s+(\d+)\s+(\S+)\s", data)
    if not m:
        raise GeometryError("not a single-channel PFM file")
    width, height = int(m.group(1)), int(m.group(2))
    scale = float(m.group(3))
    dtype = "<f4" if scale < 0 else ">f4"
    body = data[m.end():]
    if len(body) < width * height * 4:
        raise GeometryError("PFM payload is shorter than its header declares")
    grid = np.frombuffer(body, dtype=dtype, count=width * height).reshape(height, width)
    return DepthRaster(np.flipud(grid).astype(float))


def write_pfm(raster: DepthRaster) -> bytes:
    header = f"Pf\n{raster.width} {raster.height}\n-1.0\n".encode("ascii")
    grid = np.flipud(raster.values).astype("<f4")
    return header + grid.tobytes()


def load_pfm(path: str | Path) -> DepthRaster:
    return read_pfm(Path(path).read_bytes())


def sample_depth(depth: DepthRaster, u: float, v: float, radius: int = 3) -> float | None:
    """Depth at sub-pixel ``(u, v)``; pixel centres sit at integer coordinates.

    Bilinear when the four surrounding pixels are valid, otherwise the
    nearest valid pixel within ``radius``. ``None`` if there is none.
    """
    vals = depth.values
    mask = depth.mask
    h, w = vals.shape
    if not (-radius <= u <= w - 1 + radius and -radius <= v <= h - 1 + radius):
        return None
    uc = min(max(u, 0.0), w - 1.0)
    vc = min(max(v, 0.0), h - 1.0)
    u0, v0 = int(math.floor(uc)), int(math.floor(vc))
    u1, v1 = min(u0 + 1, w - 1), min(v0 + 1, h - 1)
    if mask[v0, u0] and mask[v0, u1] and mask[v1, u0] and mask[v1, u1]:
        a, b = uc - u0, vc - v0
        top = vals[v0, u0] * (1 - a) + vals[v0, u1] * a
        bot = vals[v1, u0] * (1 - a) + vals[v1, u1] * a
        return float(top * (1 - b) + bot * b)
    r0, r1 = max(0, int(math.floor(v - radius))), min(h - 1, int(math.ceil(v + radius)))
    c0, c1 = max(0, int(math.floor(u - radius))), min(w - 1, int(math.ceil(u + radius)))
    if r0 > r1 or c0 > c1:
        return None
    rows, cols = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    d2 = (rows - v) ** 2 + (cols - u) ** 2
    ok = mask[r0 : r1 + 1, c0 : c1 + 1] & (d2 <= radius * radius)
    if not ok.any():
        return None
    d2 = np.where(ok, d2, np.inf)
    idx = np.unravel_index(np.argmin(d2), d2.shape)
    return float(vals[r0 + idx[0], c0 + idx[1]])


# --------------------------------------------------------------------------
# Scale alignment

@dataclass(frozen=True)
class ScaleEstimate:
    scale: float  # metres per relative-depth unit
    inlier_fraction: float
    n_pixels: int
    residual_median: float  # m, over all jointly valid pixels
    accepted: bool
    reason: str = ""


def huber_scale(rel: np.ndarray, metric: np.ndarray, delta: float, steps: int = 10) -> float:
    """One-parameter Huber regression ``metric ~ scale * rel`` by IRLS."""
    denom = np.dot(rel, rel)
    if denom <= 0:
        return math.nan
    scale = np.dot(rel, metric) / denom
    for _ in range(steps):
        r = np.abs(scale * rel - metric)
        w = np.where(r <= delta, 1.0, delta / np.maximum(r, 1e-300))
        denom = np.dot(w * rel, rel)
        if denom <= 0:
            break
        scale = np.dot(w * rel, metric) / denom
    return float(scale)


def estimate_scale(
    d_rel: DepthRaster,
    d_metric: DepthRaster,
    cfg: GeometryConfig | None = None,
    rng: np.random.Generator | None = None,
) -> ScaleEstimate:
    """Robustly fit the metric scale of a relative depth map.

    RANSAC over pixel subsets, each subset fitted with a Huber loss. A pixel
    is an inlier when its scaled residual is below ``residual_fraction`` of
    the median metric depth. The best consensus set is refitted and the
    estimate is rejected when too few pixels or inliers support it.
    """
    cfg = cfg or GeometryConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if d_rel.values.shape != d_metric.values.shape:
        raise GeometryError(
            f"depth rasters differ in shape: {d_rel.values.shape} vs {d_metric.values.shape}"
        )
    joint = d_rel.mask & d_metric.mask
    rel = d_rel.values[joint]
    met = d_metric.values[joint]
    n = rel.size
    if n < cfg.min_valid_pixels:
        return ScaleEstimate(math.nan, 0.0, n, math.nan, False, f"only {n} valid pixels")

    threshold = cfg.residual_fraction * float(np.median(met))
    sample = min(cfg.ransac_sample_size, n)
    best_count = -1
    best_mask = None
    for _ in range(cfg.ransac_iterations):
        idx = rng.choice(n, size=sample, replace=False)
        s = huber_scale(rel[idx], met[idx], cfg.huber_delta, cfg.irls_steps)
        if not (math.isfinite(s) and s > 0):
            continue
        inliers = np.abs(s * rel - met) < threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count, best_mask = count, inliers

    if best_mask is None or best_count == 0:
        return ScaleEstimate(math.nan, 0.0, n, math.nan, False, "no consensus")
    scale = huber_scale(rel[best_mask], met[best_mask], cfg.huber_delta, cfg.irls_steps)
    resid = np.abs(scale * rel - met)
    frac = float(np.mean(resid < threshold))
    med = float(np.median(resid))
    if not (math.isfinite(scale) and scale > 0):
        return ScaleEstimate(math.nan, frac, n, med, False, "degenerate scale")
    if frac < cfg.min_inlier_fraction:
        return ScaleEstimate(scale, frac, n, med, False, f"inlier fraction {frac:.3f} too low")
    return ScaleEstimate(scale, frac, n, med, True)


def interpolate_scales(keyframes, scales, frames) -> np.ndarray:
    """Linear interpolation of per-keyframe scales; held constant past the ends."""
    keyframes = np.asarray(keyframes, dtype=float)
    order = np.argsort(keyframes)
    return np.interp(np.asarray(frames, dtype=float), keyframes[order], np.asarray(scales)[order])


# --------------------------------------------------------------------------
# Un-projection and heights

def unproject_to_world(cam: CameraFrame, scale: float, depth: DepthRaster, pts, radius: int = 3):
    """Lift pixel points to world coordinates using scaled depth.

    Returns ``(world, valid)``; rows of ``world`` for dropped points are NaN.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    out = np.full((len(pts), 3), np.nan)
    valid = np.zeros(len(pts), dtype=bool)
    for i, (u, v) in enumerate(pts):
        d = sample_depth(depth, u, v, radius)
        if d is None:
            continue
        z = scale * d
        cam_pt = np.array([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z])
        out[i] = cam.R @ cam_pt + scale * cam.t
        valid[i] = True
    return out, valid


def project_to_pixels(cam: CameraFrame, scale: float, world) -> tuple[np.ndarray, np.ndarray]:
    """Forward pinhole projection; returns pixel coords and camera-frame depth."""
    world = np.asarray(world, dtype=float).reshape(-1, 3)
    cam_pts = (world - scale * cam.t) @ cam.R  # R^T (X - s t)
    z = cam_pts[:, 2]
    u = cam.fx * cam_pts[:, 0] / z + cam.cx
    v = cam.fy * cam_pts[:, 1] / z + cam.cy
    return np.stack([u, v], axis=1), z


def person_height(bbox_height_px: float, z_cam: float, fy: float) -> float:
    return bbox_height_px * z_cam / fy


def estimate_person_heights(tracklets, cams: dict, scales: dict, depths: dict, radius: int = 3) -> np.ndarray:
    """Metric height of every detection; NaN where depth or camera is missing.

    ``scales`` and ``depths`` are keyed by frame like ``cams``.
    """
    u = tracklets.left + tracklets.width / 2.0
    v = tracklets.top + tracklets.height
    out = np.full(len(tracklets), np.nan)
    for i in range(len(tracklets)):
        f = int(tracklets.frame[i])
        if f not in cams or f not in depths or f not in scales:
            continue
        d = sample_depth(depths[f], u[i], v[i], radius)
        if d is None:
            continue
        out[i] = person_height(tracklets.height[i], scales[f] * d, cams[f].fy)
    return out


@dataclass(frozen=True)
class HeightCorrection:
    scales: np.ndarray
    factor: float
    mean_before: float
    mean_after: float
    corrected: bool


def anthropometric_correction(
    heights, scales, low: float = 1.4, high: float = 2.0, target: float = 1.7
) -> HeightCorrection:
    """Rescale the per-frame scales when the mean person height is implausible.

    Heights strictly inside ``(low, high)`` leave the scales alone; otherwise
    every scale is multiplied so that the mean height becomes ``target``.
    Absent (NaN) heights are ignored.
    """
    h = np.asarray(heights, dtype=float)
    h = h[np.isfinite(h)]
    if h.size == 0:
        raise GeometryError("no person heights available")
    mean = float(h.mean())
    if not mean > 0:
        raise GeometryError(f"mean person height {mean} is not positive")
    scales = np.asarray(scales, dtype=float)
    if low < mean < high:
        return HeightCorrection(scales.copy(), 1.0, mean, mean, False)
    factor = target / mean
    return HeightCorrection(scales * factor, factor, mean, float(np.mean(h * factor)), True)


# --------------------------------------------------------------------------
# Ground plane

@dataclass(frozen=True, eq=False)
class GroundPlane:
    normal: np.ndarray  # unit
    origin: np.ndarray
    basis: np.ndarray  # (2, 3) orthonormal in-plane axes
    inliers: np.ndarray

    def to_bev(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3) - self.origin
        return p @ self.basis.T

    def residuals(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3) - self.origin
        return p @ self.normal


def _sign_fix(vec: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(vec)))
    return vec if vec[i] >= 0 else -vec


def _tls_plane(points: np.ndarray):
    centroid = points.mean(axis=0)
    _, sv, vt = np.linalg.svd(points - centroid, full_matrices=False)
    return centroid, sv, vt


def fit_ground_plane(
    points,
    threshold: float = 0.2,
    iterations: int = 200,
    rng: np.random.Generator | None = None,
    up=None,
) -> GroundPlane:
    """RANSAC + total-least-squares plane through ground-contact points.

    The normal points towards ``up`` when given, otherwise its largest
    component is positive. The in-plane x axis is the first principal
    direction of the inlier cloud.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    if len(pts) < 3:
        raise GeometryError("need at least 3 points for a plane")
    _, sv, _ = _tls_plane(pts)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise GeometryError("points are collinear")

    rng = rng if rng is not None else np.random.default_rng(0)
    best = None
    best_count = -1
    for _ in range(iterations):
        a, b, c = pts[rng.choice(len(pts), 3, replace=False)]
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            continue
        inl = np.abs((pts - a) @ (n / norm)) < threshold
        count = int(inl.sum())
        if count > best_count:
            best, best_count = inl, count
    if best is None or best_count < 3:
        best = np.ones(len(pts), dtype=bool)

    centroid, sv, vt = _tls_plane(pts[best])
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise GeometryError("inlier points are collinear")
    normal = vt[2]
    if up is not None:
        if np.dot(normal, np.asarray(up, dtype=float)) < 0:
            normal = -normal
    else:
        normal = _sign_fix(normal)
    x_axis = _sign_fix(vt[0] - np.dot(vt[0], normal) * normal)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(normal, x_axis)
    return GroundPlane(normal, centroid, np.stack([x_axis, y_axis]), best)


# --------------------------------------------------------------------------
# Camera motion

def rotation_angle_deg(Ra: np.ndarray, Rb: np.ndarray) -> float:
    c = (np.trace(Ra @ Rb.T) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def staticity_check(
    cams, scales=None, max_translation: float = 0.05, max_rotation_deg: float = 0.5
) -> bool:
    """True when consecutive camera poses barely move.

    Camera centres are compared after metric scaling (``scale * t``).
    """
    cams = sorted(cams, key=lambda c: c.frame)
    if len(cams) < 2:
        raise GeometryError("staticity check needs at least two frames")
    if scales is None:
        scales = np.ones(len(cams))
    scales = np.broadcast_to(np.asarray(scales, dtype=float), (len(cams),))
    for k in range(1, len(cams)):
        a, b = cams[k - 1], cams[k]
        moved = np.linalg.norm(scales[k] * b.t - scales[k - 1] * a.t)
        if moved >= max_translation:
            return False
        if rotation_angle_deg(a.R, b.R) >= max_rotation_deg:
            return False
    return True
