"""Agents, trajectories, scenes and tracker output, plus their file formats.

Frames are 0-based everywhere inside the package. MOTChallenge files are
1-based and are converted when parsed.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    pass


def _frozen_array(values, dtype=float, ndim=None) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"expected {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Contiguous BEV track of one agent; row j is frame ``start_frame + j``."""

    agent_id: int
    start_frame: int
    positions: np.ndarray
    confidence: np.ndarray | None = None
    geo_confidence: np.ndarray | None = None

    def __post_init__(self):
        pos = _frozen_array(self.positions)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ValidationError(
                f"agent {self.agent_id}: positions must be (L>=1, 2), got {pos.shape}"
            )
        if not np.all(np.isfinite(pos)):
            raise ValidationError(f"agent {self.agent_id}: non-finite position")
        if self.start_frame < 0:
            raise ValidationError(f"agent {self.agent_id}: negative start frame")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "agent_id", int(self.agent_id))
        object.__setattr__(self, "start_frame", int(self.start_frame))
        for name in ("confidence", "geo_confidence"):
            values = getattr(self, name)
            if values is None:
                continue
            arr = _frozen_array(values, ndim=1)
            if arr.shape[0] != pos.shape[0]:
                raise ValidationError(
                    f"agent {self.agent_id}: {name} length {arr.shape[0]} != {pos.shape[0]}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"agent {self.agent_id}: non-finite {name}")
            object.__setattr__(self, name, arr)

    @property
    def length(self) -> int:
        return self.positions.shape[0]

    @property
    def end_frame(self) -> int:
        return self.start_frame + self.length - 1

    @property
    def frames(self) -> np.ndarray:
        return np.arange(self.start_frame, self.end_frame + 1)

    def confidence_or_default(self) -> np.ndarray:
        if self.confidence is None:
            return np.ones(self.length)
        return self.confidence

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.start_frame == other.start_frame
            and np.array_equal(self.positions, other.positions)
            and _opt_equal(self.confidence, other.confidence)
            and _opt_equal(self.geo_confidence, other.geo_confidence)
        )

    __hash__ = None


def _opt_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(a, b)


@dataclass(frozen=True, eq=False)
class Scene:
    """All agent trajectories of one clip plus its frame rate."""

    trajectories: tuple[Trajectory, ...]
    fps: float
    frame_count: int | None = None
    name: str = ""

    def __post_init__(self):
        trajs = tuple(sorted(self.trajectories, key=lambda t: t.agent_id))
        ids = [t.agent_id for t in trajs]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"scene {self.name!r}: duplicate agent ids")
        if not (math.isfinite(self.fps) and self.fps > 0):
            raise ValidationError(f"scene {self.name!r}: fps must be > 0, got {self.fps}")
        last = max((t.end_frame for t in trajs), default=-1)
        k = last + 1 if self.frame_count is None else int(self.frame_count)
        if k < last + 1:
            raise ValidationError(
                f"scene {self.name!r}: frame_count {k} but a trajectory ends at frame {last}"
            )
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "frame_count", k)
        object.__setattr__(self, "fps", float(self.fps))

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.frame_count == other.frame_count
            and self.trajectories == other.trajectories
        )

    __hash__ = None

    def detection_table(self) -> dict[str, np.ndarray]:
        """Flat per-detection arrays sorted by (frame, agent index)."""
        if not self.trajectories:
            empty = np.zeros(0)
            return {"frame": empty.astype(int), "agent": empty.astype(int), "xy": np.zeros((0, 2))}
        frames = np.concatenate([t.frames for t in self.trajectories])
        agents = np.concatenate(
            [np.full(t.length, i) for i, t in enumerate(self.trajectories)]
        )
        xy = np.concatenate([t.positions for t in self.trajectories])
        order = np.lexsort((agents, frames))
        return {"frame": frames[order], "agent": agents[order], "xy": xy[order]}

    def active_counts(self) -> np.ndarray:
        """Number of active agents per frame, length ``frame_count``."""
        counts = np.zeros(self.frame_count, dtype=int)
        for t in self.trajectories:
            counts[t.start_frame : t.end_frame + 1] += 1
        return counts


# --------------------------------------------------------------------------
# Tracker output

@dataclass(frozen=True, eq=False)
class TrackletSet:
    """Pixel-space bounding boxes, one row per (frame, track_id)."""

    frame: np.ndarray
    track_id: np.ndarray
    left: np.ndarray
    top: np.ndarray
    width: np.ndarray
    height: np.ndarray
    confidence: np.ndarray
    image_width: float
    image_height: float

    def __len__(self) -> int:
        return self.frame.shape[0]

    def track_ids(self) -> np.ndarray:
        return np.unique(self.track_id)


def make_tracklets(rows: Iterable[Sequence[float]], image_dims: tuple[float, float]) -> TrackletSet:
    """Build a validated, clipped, sorted TrackletSet.

    ``rows`` hold ``(frame0, track_id, left, top, width, height, conf)`` with
    0-based frames.
    """
    img_w, img_h = float(image_dims[0]), float(image_dims[1])
    if not (img_w > 0 and img_h > 0):
        raise ValidationError("image dimensions must be positive")
    data = np.array(list(rows), dtype=float).reshape(-1, 7)
    frame = data[:, 0].astype(int)
    track = data[:, 1].astype(int)
    left, top, w, h, conf = data[:, 2], data[:, 3], data[:, 4], data[:, 5], data[:, 6]
    if np.any(w <= 0) or np.any(h <= 0):
        raise ValidationError("bounding boxes must have positive width and height")
    if np.any((conf < 0) | (conf > 1)):
        raise ValidationError("confidence must lie in [0, 1]")
    if np.any(frame < 0):
        raise ValidationError("frames must be non-negative")

    x0 = np.clip(left, 0, img_w)
    y0 = np.clip(top, 0, img_h)
    x1 = np.clip(left + w, 0, img_w)
    y1 = np.clip(top + h, 0, img_h)
    if np.any(x1 <= x0) or np.any(y1 <= y0):
        raise ValidationError("bounding box lies outside the image")

    order = np.lexsort((frame, track))
    key = np.stack([track[order], frame[order]], axis=1)
    if len(key) > 1:
        dup = np.all(key[1:] == key[:-1], axis=1)
        if np.any(dup):
            t_id, f = key[1:][dup][0]
            raise ValidationError(f"duplicate detection for frame {f + 1}, id {t_id}")

    def col(a):
        return _frozen_array(a[order], dtype=a.dtype)

    return TrackletSet(
        frame=col(frame),
        track_id=col(track),
        left=col(x0),
        top=col(y0),
        width=col(x1 - x0),
        height=col(y1 - y0),
        confidence=col(conf),
        image_width=img_w,
        image_height=img_h,
    )


def parse_tracklets(text: bytes | str, image_dims: tuple[float, float]) -> TrackletSet:
    """Parse MOTChallenge CSV (``frame,id,left,top,width,height,conf,...``)."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    rows = []
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 7:
            raise ParseError(f"expected at least 7 fields, got {len(parts)}", lineno)
        try:
            frame = int(float(parts[0]))
            track = int(float(parts[1]))
            vals = [float(p) for p in parts[2:7]]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if frame < 1:
            raise ParseError(f"frame numbers start at 1, got {frame}", lineno)
        if vals[2] < 0 or vals[3] < 0:
            raise ValidationError(f"line {lineno}: negative box size")
        rows.append((frame - 1, track, *vals))
    return make_tracklets(rows, image_dims)


def format_tracklets(t: TrackletSet) -> str:
    lines = []
    for i in range(len(t)):
        lines.append(
            f"{t.frame[i] + 1},{t.track_id[i]},{_fmt(t.left[i])},{_fmt(t.top[i])},"
            f"{_fmt(t.width[i])},{_fmt(t.height[i])},{_fmt(t.confidence[i])},-1,-1,-1"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def ground_contact_points(t: TrackletSet) -> dict[int, np.ndarray]:
    """Bottom-midpoint of every box, grouped per track as ``(frame, u, v)`` rows."""
    u = t.left + t.width / 2.0
    v = t.top + t.height
    out = {}
    for tid in t.track_ids():
        sel = t.track_id == tid
        out[int(tid)] = np.stack([t.frame[sel].astype(float), u[sel], v[sel]], axis=1)
    return out


# --------------------------------------------------------------------------
# Scene CSV

SCENE_HEADER = "frame,agent_id,x_m,y_m"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_scene(scene: Scene) -> str:
    has_conf = any(t.confidence is not None for t in scene)
    has_geo = any(t.geo_confidence is not None for t in scene)
    header = SCENE_HEADER + (",conf" if has_conf else "") + (",geo_conf" if has_geo else "")
    out = [f"# fps={_fmt(scene.fps)}", f"# frame_count={scene.frame_count}", header]
    for t in scene:
        conf = t.confidence_or_default()
        geo = t.geo_confidence
        for j in range(t.length):
            row = [str(t.start_frame + j), str(t.agent_id), _fmt(t.positions[j, 0]), _fmt(t.positions[j, 1])]
            if has_conf:
                row.append(_fmt(conf[j]))
            if has_geo:
                row.append(_fmt(geo[j]) if geo is not None else "")
            out.append(",".join(row))
    return "\n".join(out) + "\n"


def read_scene(text: bytes | str, name: str = "") -> Scene:
    """Parse the scene CSV written by :func:`write_scene`.

    Gaps in an agent's frame sequence are rejected; a tracker that loses
    someone must hand out a new id when it picks them up again.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    fps = None
    frame_count = None
    columns = None
    records: dict[int, list] = {}
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                key = key.strip()
                try:
                    if key == "fps":
                        fps = float(value)
                    elif key == "frame_count":
                        frame_count = int(value)
                except ValueError:
                    raise ParseError(f"bad {key} value {value.strip()!r}", lineno) from None
            continue
        parts = [p.strip() for p in line.split(",")]
        if columns is None:
            if parts[:4] != SCENE_HEADER.split(","):
                raise ParseError(f"expected header {SCENE_HEADER!r}", lineno)
            extra = set(parts[4:]) - {"conf", "geo_conf"}
            if extra:
                raise ParseError(f"unknown columns {sorted(extra)}", lineno)
            columns = parts
            continue
        if len(parts) != len(columns):
            raise ParseError(f"expected {len(columns)} fields, got {len(parts)}", lineno)
        try:
            frame = int(parts[0])
            agent = int(parts[1])
            x, y = float(parts[2]), float(parts[3])
            extras = {c: (float(v) if v else None) for c, v in zip(columns[4:], parts[4:])}
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if frame < 0:
            raise ParseError("negative frame", lineno)
        records.setdefault(agent, []).append((frame, x, y, extras.get("conf"), extras.get("geo_conf")))
    if fps is None:
        raise ParseError("missing '# fps=<value>' line")

    trajs = []
    for agent, rows in records.items():
        rows.sort(key=lambda r: r[0])
        frames = np.array([r[0] for r in rows])
        if np.any(np.diff(frames) != 1):
            raise ValidationError(f"agent {agent}: frames are not contiguous")
        conf = [r[3] for r in rows]
        geo = [r[4] for r in rows]
        trajs.append(
            Trajectory(
                agent_id=agent,
                start_frame=int(frames[0]),
                positions=[(r[1], r[2]) for r in rows],
                confidence=None if any(c is None for c in conf) else conf,
                geo_confidence=None if any(g is None for g in geo) else geo,
            )
        )
    return Scene(tuple(trajs), fps=fps, frame_count=frame_count, name=name)


def scene_from_points(
    points: dict[int, np.ndarray],
    fps: float,
    frame_count: int | None = None,
    confidence: dict[int, np.ndarray] | None = None,
    geo_confidence: dict[int, np.ndarray] | None = None,
    split_gaps: bool = False,
    name: str = "",
) -> tuple[Scene, int]:
    """Assemble a scene from per-agent ``(frame, x, y)`` arrays.

    With ``split_gaps`` a track that skips frames is cut into pieces and each
    later piece receives a fresh id above every existing id; otherwise a gap
    raises. Returns the scene and the number of extra pieces created.
    """
    next_id = max(points, default=-1) + 1
    trajs = []
    n_split = 0
    for agent in sorted(points):
        pts = np.asarray(points[agent], dtype=float)
        if pts.shape[0] == 0:
            continue
        order = np.argsort(pts[:, 0], kind="stable")
        pts = pts[order]
        conf = None if confidence is None else np.asarray(confidence[agent])[order]
        geo = None if geo_confidence is None else np.asarray(geo_confidence[agent])[order]
        frames = pts[:, 0].astype(int)
        breaks = np.flatnonzero(np.diff(frames) != 1) + 1
        if len(breaks) and not split_gaps:
            raise ValidationError(f"agent {agent}: frames are not contiguous")
        for piece, idx in enumerate(np.split(np.arange(len(frames)), breaks)):
            aid = agent
            if piece > 0:
                aid = next_id
                next_id += 1
                n_split += 1
            trajs.append(
                Trajectory(
                    agent_id=aid,
                    start_frame=int(frames[idx[0]]),
                    positions=pts[idx, 1:3],
                    confidence=None if conf is None else conf[idx],
                    geo_confidence=None if geo is None else geo[idx],
                )
            )
    return Scene(tuple(trajs), fps=fps, frame_count=frame_count, name=name), n_split


@dataclass(frozen=True)
class SceneStatistics:
    n_detections: int
    n_unique: int
    detections_per_frame: float


def scene_statistics(scene: Scene) -> SceneStatistics:
    n_det = sum(t.length for t in scene)
    k = scene.frame_count
    return SceneStatistics(
        n_detections=n_det,
        n_unique=len(scene),
        detections_per_frame=n_det / k if k > 0 else 0.0,
    )


def accumulation_check(scenes: Sequence[Scene], min_tracks: int = 150, min_detections: int = 1500) -> bool:
    """True once the pooled scenes hold enough tracks or detections."""
    if len({s.fps for s in scenes}) > 1:
        raise ValidationError("accumulated scenes must share fps")
    stats = [scene_statistics(s) for s in scenes]
    return (
        sum(s.n_unique for s in stats) >= min_tracks
        or sum(s.n_detections for s in stats) >= min_detections
    )


def resample_trajectory(t: Trajectory, fps_from: float, fps_to: float) -> Trajectory:
    """Linear-interpolate a track onto the frame grid of another frame rate."""
    if fps_from == fps_to:
        return t
    t0 = t.start_frame / fps_from
    t1 = t.end_frame / fps_from
    k0 = math.ceil(t0 * fps_to - 1e-9)
    k1 = math.floor(t1 * fps_to + 1e-9)
    if k1 < k0:
        k0 = k1 = max(0, round(t0 * fps_to))
    new_times = np.arange(k0, k1 + 1) / fps_to
    old_times = t.frames / fps_from
    xy = np.stack(
        [np.interp(new_times, old_times, t.positions[:, d]) for d in range(2)], axis=1
    )
    conf = None
    if t.confidence is not None:
        conf = np.interp(new_times, old_times, t.confidence)
    geo = None
    if t.geo_confidence is not None:
        geo = np.interp(new_times, old_times, t.geo_confidence)
    return Trajectory(t.agent_id, k0, xy, conf, geo)


def resample_scene(scene: Scene, fps: float) -> Scene:
    if scene.fps == fps:
        return scene
    trajs = tuple(resample_trajectory(t, scene.fps, fps) for t in scene)
    k = math.ceil(scene.frame_count * fps / scene.fps)
    k = max([k] + [t.end_frame + 1 for t in trajs])
    return Scene(trajs, fps=fps, frame_count=k, name=scene.name)
