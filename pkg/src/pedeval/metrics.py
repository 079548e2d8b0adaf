"""Kinematic, social and fidelity metrics for generated pedestrian scenes.

Every metric has two forms. Against a reference (``gt`` given, I2V) it is a
distance between the generated and reference distributions; on its own
(T2V) it is an absolute statistic. Functions accept a single scene or a
sequence of scenes; sequences are pooled (agents, frames and samples are
concatenated rather than averaged per clip).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .config import LOS_GRADES, LOS_THRESHOLDS, Config, MetricsConfig
from .kinematics import KinematicSummary, SmoothedTrajectory, kalman_smooth, summarize, walking_speed_summary
from .metricspace import dtw, dtw_matrix, emd_1d, kde_mode
from .trajdata import Scene, resample_scene

I2V = "i2v"
T2V = "t2v"

METRIC_NAMES = (
    "velocity",
    "acceleration",
    "distance",
    "path_error",
    "path_diversity",
    "internal_diversity",
    "collision",
    "stationary",
    "population",
    "flow",
    "nn_dist",
    "mot_conf",
    "geo_conf",
)

UNITS = {
    "velocity": "m/s",
    "acceleration": "m/s^2",
    "distance": "m",
    "path_error": "m*s",
    "path_diversity": "fraction",
    "internal_diversity": "m*s",
    "collision": {I2V: "agents/frame", T2V: "percent"},
    "stationary": "fraction",
    "population": "agents",
    "flow": "1/(m*s)",
    "nn_dist": "m",
    "mot_conf": "score",
    "geo_conf": "score",
}


class EmptySceneError(ValueError):
    pass


@dataclass(eq=False)
class PreparedScene:
    """A scene with its smoothed states and per-detection arrays cached."""

    scene: Scene
    smoothed: list[SmoothedTrajectory]
    summaries: list[KinematicSummary]
    frame: np.ndarray  # per detection, sorted by frame
    agent: np.ndarray  # index into scene.trajectories
    xy: np.ndarray  # raw position
    vel: np.ndarray  # smoothed velocity
    bounds: np.ndarray  # detections of frame k are bounds[k]:bounds[k+1]

    @property
    def name(self) -> str:
        return self.scene.name

    def frame_slices(self):
        for k in range(self.scene.frame_count):
            yield k, slice(self.bounds[k], self.bounds[k + 1])


def prepare(scene: Scene, cfg: Config | None = None) -> PreparedScene:
    cfg = cfg or Config()
    smoothed = [kalman_smooth(t, scene.fps, cfg.kalman) for t in scene]
    summaries = [summarize(s, scene.fps, cfg.metrics.stationary_threshold) for s in smoothed]
    table = scene.detection_table()
    if len(scene):
        vel_all = np.concatenate([s.velocities for s in smoothed])
        frames_all = np.concatenate([t.frames for t in scene])
        agents_all = np.concatenate([np.full(t.length, i) for i, t in enumerate(scene)])
        order = np.lexsort((agents_all, frames_all))
        vel = vel_all[order]
    else:
        vel = np.zeros((0, 2))
    bounds = np.searchsorted(table["frame"], np.arange(scene.frame_count + 1), side="left")
    return PreparedScene(scene, smoothed, summaries, table["frame"], table["agent"], table["xy"], vel, bounds)


SceneLike = Union[Scene, PreparedScene, Sequence[Union[Scene, PreparedScene]]]


def as_prepared(scenes: SceneLike, cfg: Config | None = None) -> list[PreparedScene]:
    if isinstance(scenes, (Scene, PreparedScene)):
        scenes = [scenes]
    return [s if isinstance(s, PreparedScene) else prepare(s, cfg) for s in scenes]


def _names(preps) -> str:
    return ",".join(p.name or "<unnamed>" for p in preps)


def _pooled_summaries(preps) -> list[KinematicSummary]:
    out = [s for p in preps for s in p.summaries]
    if not out:
        raise EmptySceneError(f"no agents in scene(s) {_names(preps)}")
    return out


def _mcfg(cfg: Config | None) -> MetricsConfig:
    return (cfg or Config()).metrics


# --------------------------------------------------------------------------
# Trajectory kinematics

def _summary_metric(attr, gen, gt, cfg):
    g = np.array([getattr(s, attr) for s in _pooled_summaries(as_prepared(gen, cfg))], dtype=float)
    if gt is None:
        return float(g.mean())
    r = np.array([getattr(s, attr) for s in _pooled_summaries(as_prepared(gt, cfg))], dtype=float)
    return emd_1d(g, r)


def m_velocity(gen: SceneLike, gt: SceneLike | None = None, cfg: Config | None = None) -> float:
    return _summary_metric("mean_speed", gen, gt, cfg)


def m_acceleration(gen: SceneLike, gt: SceneLike | None = None, cfg: Config | None = None) -> float:
    return _summary_metric("mean_accel", gen, gt, cfg)


def m_distance(gen: SceneLike, gt: SceneLike | None = None, cfg: Config | None = None) -> float:
    return _summary_metric("path_length", gen, gt, cfg)


def _common_fps_tracks(gen, gt, cfg, diag):
    """Raw tracks of both sides on the reference frame rate."""
    gt_p = as_prepared(gt, cfg)
    fps = gt_p[0].scene.fps
    gen_tracks, gt_tracks = [], []
    for p in gt_p:
        scene = p.scene
        if scene.fps != fps:
            scene = resample_scene(scene, fps)
        gt_tracks += [t.positions for t in scene]
    resampled = 0
    for p in as_prepared(gen, cfg):
        scene = p.scene
        if scene.fps != fps:
            scene = resample_scene(scene, fps)
            resampled += 1
        gen_tracks += [t.positions for t in scene]
    if diag is not None and resampled:
        diag["resampled_gen_scenes"] = resampled
    if not gen_tracks or not gt_tracks:
        raise EmptySceneError("path metrics need non-empty scenes")
    return gen_tracks, gt_tracks, fps


def _dtw_cross(gen, gt, cfg, diag=None):
    gen_tracks, gt_tracks, fps = _common_fps_tracks(gen, gt, cfg, diag)
    return dtw_matrix(gen_tracks, gt_tracks, _mcfg(cfg).dtw_band), fps


def m_path_error(gen: SceneLike, gt: SceneLike, cfg: Config | None = None, diag=None, _cross=None) -> float:
    """Symmetric mean of minimum DTW distances, divided by the frame rate."""
    D, fps = _cross if _cross is not None else _dtw_cross(gen, gt, cfg, diag)
    return float((D.min(axis=1).mean() + D.min(axis=0).mean()) / (2.0 * fps))


def m_path_diversity(gen: SceneLike, gt: SceneLike, cfg: Config | None = None, diag=None, _cross=None) -> float:
    """Mean fraction of each side's trajectories picked as someone's best DTW match."""
    D, _ = _cross if _cross is not None else _dtw_cross(gen, gt, cfg, diag)
    n_gen, n_gt = D.shape
    gen_to_gt = np.unique(np.argmin(D, axis=1)).size / n_gt
    gt_to_gen = np.unique(np.argmin(D, axis=0)).size / n_gen
    return 0.5 * (gen_to_gt + gt_to_gen)


def m_internal_diversity(gen: SceneLike, cfg: Config | None = None, subsample: int | None = -1, diag=None) -> float | None:
    """Mean DTW/fps over unique trajectory pairs within each clip.

    ``subsample`` caps the number of trajectories per clip (drawn with the
    config seed); ``-1`` uses the configured cap and ``None`` uses all.
    """
    cfg = cfg or Config()
    if subsample == -1:
        subsample = cfg.metrics.internal_diversity_subsample
    rng = np.random.default_rng(cfg.seed)
    total, pairs = 0.0, 0
    for p in as_prepared(gen, cfg):
        tracks = [t.positions for t in p.scene]
        if subsample is not None and len(tracks) > subsample:
            keep = np.sort(rng.choice(len(tracks), subsample, replace=False))
            tracks = [tracks[i] for i in keep]
            if diag is not None:
                diag["internal_diversity_subsampled"] = diag.get("internal_diversity_subsampled", 0) + 1
        for i in range(len(tracks)):
            for j in range(i + 1, len(tracks)):
                total += dtw(tracks[i], tracks[j], cfg.metrics.dtw_band) / p.scene.fps
                pairs += 1
    if pairs == 0:
        if diag is not None:
            diag["internal_diversity_absent"] = "fewer than two trajectories per clip"
        return None
    return total / pairs


# --------------------------------------------------------------------------
# Social interaction

def _pairwise(xy: np.ndarray) -> np.ndarray:
    diff = xy[:, None, :] - xy[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(d, np.inf)
    return d


def collision_counts(p: PreparedScene, threshold: float = 0.1) -> np.ndarray:
    """Agents in collision per frame, one entry per frame of the clip."""
    counts = np.zeros(p.scene.frame_count, dtype=int)
    for k, sl in p.frame_slices():
        xy = p.xy[sl]
        if len(xy) < 2:
            continue
        counts[k] = int(np.sum(np.any(_pairwise(xy) < threshold, axis=1)))
    return counts


def m_collision(gen: SceneLike, gt: SceneLike | None = None, cfg: Config | None = None) -> float:
    thr = _mcfg(cfg).collision_threshold
    gp = as_prepared(gen, cfg)
    g_counts = np.concatenate([collision_counts(p, thr) for p in gp])
    if gt is None:
        n_det = sum(len(p.frame) for p in gp)
        if n_det == 0:
            raise EmptySceneError(f"no detections in scene(s) {_names(gp)}")
        return 100.0 * g_counts.sum() / n_det
    r_counts = np.concatenate([collision_counts(p, thr) for p in as_prepared(gt, cfg)])
    return emd_1d(g_counts, r_counts)


def stationary_flags(preps) -> np.ndarray:
    return np.array([s.is_stationary for s in _pooled_summaries(preps)], dtype=float)


def m_stationary(gen: SceneLike, gt: SceneLike | None = None, cfg: Config | None = None) -> float:
    g = stationary_flags(as_prepared(gen, cfg))
    if gt is None:
        return float(g.mean())
    return emd_1d(g, stationary_flags(as_prepared(gt, cfg)))


def m_population(gen: SceneLike, gt: SceneLike | None = None, cfg: Config | None = None) -> float:
    g = np.concatenate([p.scene.active_counts() for p in as_prepared(gen, cfg)])
    if g.size == 0:
        raise EmptySceneError("population needs at least one frame")
    if gt is None:
        return float(g.mean())
    r = np.concatenate([p.scene.active_counts() for p in as_prepared(gt, cfg)])
    return emd_1d(g, r)


@dataclass
class DensitySamples:
    density: np.ndarray
    speed: np.ndarray
    vel: np.ndarray
    excluded_sparse: int = 0
    excluded_zero_radius: int = 0

    @property
    def flow(self) -> np.ndarray:
        return self.density * self.speed


def density_samples(p: PreparedScene, k: int = 4) -> DensitySamples:
    """Local density from the k-th nearest neighbour at every agent-timestep."""
    rho, vel = [], []
    sparse = zero = 0
    for _, sl in p.frame_slices():
        xy = p.xy[sl]
        n = len(xy)
        if n == 0:
            continue
        if n < k + 1:
            sparse += n
            continue
        r = np.sort(_pairwise(xy), axis=1)[:, k - 1]
        ok = r > 0
        zero += int((~ok).sum())
        rho.append(k / (math.pi * r[ok] ** 2))
        vel.append(p.vel[sl][ok])
    density = np.concatenate(rho) if rho else np.zeros(0)
    v = np.concatenate(vel) if vel else np.zeros((0, 2))
    return DensitySamples(density, np.linalg.norm(v, axis=1), v, sparse, zero)


def _directional_flows(samples: DensitySamples):
    ax, ay = np.abs(samples.vel[:, 0]), np.abs(samples.vel[:, 1])
    f = samples.flow
    return f[ax > ay], f[ay > ax]


def _pooled_density(preps, k) -> DensitySamples:
    parts = [density_samples(p, k) for p in preps]
    return DensitySamples(
        np.concatenate([s.density for s in parts]) if parts else np.zeros(0),
        np.concatenate([s.speed for s in parts]) if parts else np.zeros(0),
        np.concatenate([s.vel for s in parts]) if parts else np.zeros((0, 2)),
        sum(s.excluded_sparse for s in parts),
        sum(s.excluded_zero_radius for s in parts),
    )


def m_flow(gen: SceneLike, gt: SceneLike | None = None, cfg: Config | None = None, diag=None) -> float | None:
    """Density-times-speed, split by dominant movement axis."""
    k = _mcfg(cfg).density_neighbors
    gs = _pooled_density(as_prepared(gen, cfg), k)
    gx, gy = _directional_flows(gs)
    if diag is not None:
        diag["flow_excluded_sparse"] = gs.excluded_sparse
        diag["flow_excluded_zero_radius"] = gs.excluded_zero_radius
    if gt is None:
        parts = [float(f.mean()) for f in (gx, gy) if f.size]
    else:
        rs = _pooled_density(as_prepared(gt, cfg), k)
        rx, ry = _directional_flows(rs)
        parts = [emd_1d(a, b) for a, b in ((gx, rx), (gy, ry)) if a.size and b.size]
    if not parts:
        if diag is not None:
            diag["flow_absent"] = "no density samples"
        return None
    if len(parts) == 1 and diag is not None:
        diag["flow_single_direction"] = True
    return float(np.mean(parts))


@dataclass
class NeighbourSamples:
    distance: np.ndarray
    offset: np.ndarray  # vector to the nearest moving neighbour
    heading: np.ndarray  # unit velocity of the agent


def nearest_moving_neighbours(p: PreparedScene, moving_speed: float = 0.1, radius: float = 10.0) -> NeighbourSamples:
    dist, off, head = [], [], []
    for _, sl in p.frame_slices():
        v = p.vel[sl]
        speed = np.linalg.norm(v, axis=1)
        moving = speed > moving_speed
        if moving.sum() < 2:
            continue
        xy = p.xy[sl][moving]
        d = _pairwise(xy)
        j = np.argmin(d, axis=1)
        best = d[np.arange(len(xy)), j]
        ok = best <= radius
        dist.append(best[ok])
        off.append(xy[j[ok]] - xy[ok])
        head.append(v[moving][ok] / speed[moving][ok, None])
    if not dist:
        return NeighbourSamples(np.zeros(0), np.zeros((0, 2)), np.zeros((0, 2)))
    return NeighbourSamples(np.concatenate(dist), np.concatenate(off), np.concatenate(head))


def _pooled_nn(preps, m: MetricsConfig) -> NeighbourSamples:
    parts = [nearest_moving_neighbours(p, m.moving_speed, m.nn_radius) for p in preps]
    if not parts:
        return NeighbourSamples(np.zeros(0), np.zeros((0, 2)), np.zeros((0, 2)))
    return NeighbourSamples(
        np.concatenate([s.distance for s in parts]),
        np.concatenate([s.offset for s in parts]),
        np.concatenate([s.heading for s in parts]),
    )


def m_nn(gen: SceneLike, gt: SceneLike | None = None, cfg: Config | None = None, diag=None) -> float | None:
    m = _mcfg(cfg)
    g = _pooled_nn(as_prepared(gen, cfg), m).distance
    if g.size == 0:
        if diag is not None:
            diag["nn_dist_absent"] = "no moving agent has a moving neighbour"
        return None
    if gt is None:
        return kde_mode(g, m.kde_bandwidth, m.kde_grid_size)
    r = _pooled_nn(as_prepared(gt, cfg), m).distance
    if r.size == 0:
        if diag is not None:
            diag["nn_dist_absent"] = "reference has no moving neighbour pairs"
        return None
    return emd_1d(g, r)


# --------------------------------------------------------------------------
# Video fidelity

def _per_agent_mean(scenes, attr) -> float | None:
    means = []
    for p in as_prepared(scenes):
        for t in p.scene:
            c = getattr(t, attr)
            if c is None:
                return None
            means.append(float(np.mean(c)))
    if not means:
        return None
    return float(np.mean(means))


def m_mot_conf(gen: SceneLike) -> float | None:
    """Mean over agents of each agent's mean tracker confidence."""
    return _per_agent_mean(gen, "confidence")


def m_geo_conf(gen: SceneLike) -> float | None:
    """Mean over agents of each agent's mean reconstruction confidence."""
    return _per_agent_mean(gen, "geo_confidence")


# --------------------------------------------------------------------------
# Plot data

@dataclass
class PolarHistogram:
    angle_edges: np.ndarray  # degrees, 0 = heading, positive = to the left
    radius_edges: np.ndarray  # m
    mass: np.ndarray  # (angle bins, radius bins), sums to 1 unless empty

    def rows(self):
        for a in range(self.mass.shape[0]):
            for r in range(self.mass.shape[1]):
                yield a, r, float(self.mass[a, r])


def nn_polar_histogram(scenes: SceneLike, cfg: Config | None = None, angle_bins=None, radius_edges=None) -> PolarHistogram:
    """Nearest-moving-neighbour offsets in each agent's heading frame."""
    m = _mcfg(cfg)
    angle_bins = angle_bins or m.polar_angle_bins
    if radius_edges is None:
        radius_edges = np.linspace(0.0, m.polar_max_radius, m.polar_radius_bins + 1)
    angle_edges = np.linspace(-180.0, 180.0, angle_bins + 1)
    s = _pooled_nn(as_prepared(scenes, cfg), m)
    h, n = s.heading, s.offset
    forward = h[:, 0] * n[:, 0] + h[:, 1] * n[:, 1]
    left = h[:, 0] * n[:, 1] - h[:, 1] * n[:, 0]
    angle = np.degrees(np.arctan2(left, forward))
    mass, _, _ = np.histogram2d(angle, s.distance, bins=[angle_edges, np.asarray(radius_edges)])
    total = mass.sum()
    if total > 0:
        mass = mass / total
    return PolarHistogram(angle_edges, np.asarray(radius_edges, dtype=float), mass)


@dataclass
class DiagramBin:
    lo: float
    hi: float
    count: int
    speed: tuple[float, float, float]  # q1, median, q3
    flow: tuple[float, float, float]


def fundamental_diagram(scenes: SceneLike, cfg: Config | None = None, edges=None) -> list[DiagramBin | None]:
    """Speed and flow quartiles per local-density bin; empty bins are None."""
    m = _mcfg(cfg)
    if edges is None:
        edges = np.linspace(0.0, m.fd_max_density, m.fd_bins + 1)
    edges = np.asarray(edges, dtype=float)
    s = _pooled_density(as_prepared(scenes, cfg), m.density_neighbors)
    which = np.searchsorted(edges, s.density, side="right") - 1
    which[s.density == edges[-1]] = len(edges) - 2
    out: list[DiagramBin | None] = []
    for b in range(len(edges) - 1):
        sel = which == b
        if not sel.any():
            out.append(None)
            continue
        sp = np.percentile(s.speed[sel], [25, 50, 75])
        fl = np.percentile(s.flow[sel], [25, 50, 75])
        out.append(DiagramBin(edges[b], edges[b + 1], int(sel.sum()), tuple(map(float, sp)), tuple(map(float, fl))))
    return out


def classify_los(density: float) -> str:
    """Fruin level of service; a value on a boundary takes the denser grade."""
    if density < 0:
        raise ValueError("density must be non-negative")
    return LOS_GRADES[int(np.searchsorted(LOS_THRESHOLDS, density, side="right"))]


# --------------------------------------------------------------------------
# Report

@dataclass
class MetricReport:
    mode: str
    values: dict[str, float]
    diagnostics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict:
        units = {}
        for name in self.values:
            u = UNITS[name]
            units[name] = u[self.mode] if isinstance(u, dict) else u
        out = {"mode": self.mode, "diagnostics": self.diagnostics, "config": self.config, "seed": self.seed, "units": units}
        out.update(self.values)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _finite_or_absent(values: dict, diag: dict, name: str, value):
    if value is None:
        diag.setdefault("absent", []).append(name)
    elif not math.isfinite(value):
        diag.setdefault("non_finite", []).append(name)
    else:
        values[name] = float(value)


def evaluate(gen: SceneLike, gt: SceneLike | None = None, mode: str | None = None, cfg: Config | None = None) -> MetricReport:
    """Run the whole suite; ``mode`` defaults to I2V when a reference is given."""
    cfg = cfg or Config()
    mode = mode or (I2V if gt is not None else T2V)
    if mode == I2V and gt is None:
        raise ValueError("I2V evaluation needs reference scenes")
    if mode == T2V and gt is not None:
        raise ValueError("T2V evaluation takes no reference scenes")
    gp = as_prepared(gen, cfg)
    rp = as_prepared(gt, cfg) if gt is not None else None
    values: dict[str, float] = {}
    diag: dict = {}

    put = lambda name, v: _finite_or_absent(values, diag, name, v)  # noqa: E731
    put("velocity", m_velocity(gp, rp, cfg))
    put("acceleration", m_acceleration(gp, rp, cfg))
    put("distance", m_distance(gp, rp, cfg))
    if mode == I2V:
        cross = _dtw_cross(gp, rp, cfg, diag)
        put("path_error", m_path_error(gp, rp, cfg, _cross=cross))
        put("path_diversity", m_path_diversity(gp, rp, cfg, _cross=cross))
    else:
        put("internal_diversity", m_internal_diversity(gp, cfg, diag=diag))
    put("collision", m_collision(gp, rp, cfg))
    put("stationary", m_stationary(gp, rp, cfg))
    put("population", m_population(gp, rp, cfg))
    put("flow", m_flow(gp, rp, cfg, diag))
    put("nn_dist", m_nn(gp, rp, cfg, diag))
    put("mot_conf", m_mot_conf(gp))
    if mode == T2V:
        geo = m_geo_conf(gp)
        if geo is not None:
            put("geo_conf", geo)
            diag["geo_conf_low_confidence"] = geo <= cfg.metrics.geo_conf_low

    summaries = [s for p in gp for s in p.summaries]
    diag["agents"] = len(summaries)
    diag["agents_shorter_than_2"] = sum(1 for p in gp for t in p.scene if t.length < 2)
    diag["agents_shorter_than_3"] = sum(1 for p in gp for t in p.scene if t.length < 3)
    diag["walking_speed"] = walking_speed_summary(summaries)
    if rp is not None:
        diag["reference_agents"] = sum(len(p.scene) for p in rp)
        diag["reference_walking_speed"] = walking_speed_summary([s for p in rp for s in p.summaries])
    return MetricReport(mode, values, diag, cfg.to_dict(), cfg.seed)
