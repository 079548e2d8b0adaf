"""Pixel tracks -> metric BEV scene, for both reconstruction routes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .config import Config
from .trajdata import Scene, TrackletSet, scene_from_points


@dataclass
class ProjectionResult:
    scene: Scene
    dropped: int
    split_tracks: int


def project_tracklets_i2v(
    tracklets: TrackletSet,
    homography: geo.Homography,
    fps: float,
    split_gaps: bool = False,
    min_w: float = 1e-12,
    name: str = "",
) -> ProjectionResult:
    """Ground-contact points through a known homography."""
    u = tracklets.left + tracklets.width / 2.0
    v = tracklets.top + tracklets.height
    xy_valid, valid = geo.project_homography(homography, np.column_stack([u, v]), min_w)
    xy = np.full((len(tracklets), 2), np.nan)
    xy[valid] = xy_valid

    points, conf = {}, {}
    for tid in tracklets.track_ids():
        sel = (tracklets.track_id == tid) & valid
        if not sel.any():
            continue
        points[int(tid)] = np.column_stack([tracklets.frame[sel], xy[sel]])
        conf[int(tid)] = tracklets.confidence[sel]
    frame_count = int(tracklets.frame.max()) + 1 if len(tracklets) else 0
    scene, n_split = scene_from_points(
        points, fps, frame_count=frame_count, confidence=conf, split_gaps=split_gaps, name=name
    )
    return ProjectionResult(scene, int((~valid).sum()), n_split)


@dataclass
class Reconstruction:
    scene: Scene | None
    rejected: bool
    reason: str = ""
    diagnostics: dict = field(default_factory=dict)

    def rejection_record(self) -> dict:
        return {"rejected": True, "reason": self.reason, "diagnostics": self.diagnostics}


def keyframes_for(frames, stride: int) -> list[int]:
    return sorted(f for f in frames if f % stride == 0)


def reconstruct_t2v(
    tracklets: TrackletSet,
    cams: dict[int, geo.CameraFrame],
    rel_depths: dict[int, geo.DepthRaster],
    metric_depths: dict[int, geo.DepthRaster],
    fps: float,
    cfg: Config | None = None,
    geo_confidence: dict[int, geo.DepthRaster] | None = None,
    name: str = "",
) -> Reconstruction:
    """Recover a metric BEV scene from cameras and two depth sources.

    A clip is discarded as soon as one keyframe fails the scale-alignment
    checks; that is a normal outcome and is reported, not raised.
    """
    cfg = cfg or Config()
    g = cfg.geometry
    rng = np.random.default_rng(cfg.seed)
    diag: dict = {"keyframes": {}}

    keyframes = keyframes_for(set(metric_depths) & set(rel_depths), g.keyframe_stride)
    if not keyframes:
        return Reconstruction(None, True, "no keyframe with both depth maps", diag)

    key_scales = []
    for f in keyframes:
        est = geo.estimate_scale(rel_depths[f], metric_depths[f], g, rng)
        diag["keyframes"][str(f)] = {
            "scale": est.scale if est.accepted else None,
            "inlier_fraction": est.inlier_fraction,
            "n_pixels": est.n_pixels,
            "residual_median": est.residual_median if np.isfinite(est.residual_median) else None,
            "accepted": est.accepted,
            "reason": est.reason,
        }
        if not est.accepted:
            return Reconstruction(None, True, f"keyframe {f}: {est.reason}", diag)
        key_scales.append(est.scale)

    frames = sorted(set(int(f) for f in tracklets.frame))
    per_frame = geo.interpolate_scales(keyframes, key_scales, frames)
    scales = dict(zip(frames, per_frame))

    heights = geo.estimate_person_heights(tracklets, cams, scales, rel_depths, g.depth_search_radius)
    try:
        corr = geo.anthropometric_correction(
            heights, per_frame, g.height_min, g.height_max, g.height_target
        )
    except geo.GeometryError as exc:
        return Reconstruction(None, True, str(exc), diag)
    diag["height"] = {
        "mean_before": corr.mean_before,
        "mean_after": corr.mean_after,
        "factor": corr.factor,
        "corrected": corr.corrected,
        "n_heights": int(np.isfinite(heights).sum()),
    }
    scales = dict(zip(frames, corr.scales))

    u = tracklets.left + tracklets.width / 2.0
    v = tracklets.top + tracklets.height
    world = np.full((len(tracklets), 3), np.nan)
    gamma = np.full(len(tracklets), np.nan)
    for f in frames:
        sel = np.flatnonzero(tracklets.frame == f)
        if f not in cams or f not in rel_depths:
            continue
        pts = np.column_stack([u[sel], v[sel]])
        w, ok = geo.unproject_to_world(cams[f], scales[f], rel_depths[f], pts, g.depth_search_radius)
        world[sel[ok]] = w[ok]
        if geo_confidence is not None and f in geo_confidence:
            for i in sel:
                c = geo.sample_depth(geo_confidence[f], u[i], v[i], g.depth_search_radius)
                if c is not None:
                    gamma[i] = c
    valid = np.all(np.isfinite(world), axis=1)
    diag["dropped_points"] = int((~valid).sum())

    up = -np.mean([cams[f].R[:, 1] for f in frames if f in cams], axis=0)
    try:
        plane = geo.fit_ground_plane(world[valid], g.plane_inlier_threshold, g.plane_iterations, rng, up=up)
    except geo.GeometryError as exc:
        return Reconstruction(None, True, f"ground plane: {exc}", diag)
    diag["ground_plane"] = {
        "normal": plane.normal.tolist(),
        "inlier_fraction": float(plane.inliers.mean()),
    }
    bev = plane.to_bev(np.where(valid[:, None], world, 0.0))

    use_geo = geo_confidence is not None
    points, conf, geo_conf = {}, {}, {}
    for tid in tracklets.track_ids():
        sel = (tracklets.track_id == tid) & valid
        if use_geo:
            sel &= np.isfinite(gamma)
        if not sel.any():
            continue
        points[int(tid)] = np.column_stack([tracklets.frame[sel], bev[sel]])
        conf[int(tid)] = tracklets.confidence[sel]
        if use_geo:
            geo_conf[int(tid)] = gamma[sel]
    frame_count = int(tracklets.frame.max()) + 1 if len(tracklets) else 0
    scene, n_split = scene_from_points(
        points,
        fps,
        frame_count=frame_count,
        confidence=conf,
        geo_confidence=geo_conf if use_geo else None,
        split_gaps=True,
        name=name,
    )
    diag["split_tracks"] = n_split
    return Reconstruction(scene, False, "", diag)
