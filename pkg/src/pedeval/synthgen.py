"""Deterministic synthetic crowds used as fixtures for the metric suite.

``simulate`` runs a small social-force model: each agent accelerates toward
its goal at a desired speed and is pushed away from nearby agents by an
exponential repulsion. ``degenerate_fixtures`` returns hand-built scenes whose
metric values are known in closed form.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .trajdata import Scene, Trajectory

DENSITY_CLASSES = ("sparse", "moderate", "crowded")
INTERACTION_CLASSES = ("directional", "multidirectional", "converging")

# target ped/m^2 per density class
PRESET_DENSITY = {"sparse": 0.3, "moderate": 1.2, "crowded": 3.6}


@dataclass(frozen=True)
class ScenarioSpec:
    density: str = "sparse"
    interaction: str = "multidirectional"
    n_agents: int = 10
    arena_size: float = 10.0  # m, square side
    duration: float = 10.0  # s
    fps: float = 10.0
    seed: int = 0
    desired_speed: float = 1.3  # m/s
    relax_time: float = 0.5  # s
    repulsion_strength: float = 2.0  # m/s^2
    repulsion_range: float = 0.3  # m
    agent_radius: float = 0.5  # m
    repulsion: bool = True
    starts: tuple | None = None  # optional explicit ((x, y), ...)
    goals: tuple | None = None

    def __post_init__(self):
        if self.density not in DENSITY_CLASSES:
            raise ValueError(f"unknown density class {self.density!r}")
        if self.interaction not in INTERACTION_CLASSES:
            raise ValueError(f"unknown interaction class {self.interaction!r}")
        if self.n_agents <= 0:
            raise ValueError("n_agents must be positive")
        if not self.fps > 0 or not self.duration > 0 or not self.arena_size > 0:
            raise ValueError("fps, duration and arena_size must be positive")
        for name in ("starts", "goals"):
            pts = getattr(self, name)
            if pts is not None and len(pts) != self.n_agents:
                raise ValueError(f"{name} must list one point per agent")

    @classmethod
    def preset(cls, density: str, interaction: str, arena_size: float = 10.0, **kw) -> ScenarioSpec:
        """Agent count chosen so the arena starts at the class's target density."""
        n = max(1, round(PRESET_DENSITY[density] * arena_size**2))
        return cls(density=density, interaction=interaction, n_agents=n, arena_size=arena_size, **kw)

    @classmethod
    def from_dict(cls, data: dict) -> ScenarioSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        data = dict(data)
        for name in ("starts", "goals"):
            if data.get(name) is not None:
                data[name] = tuple(tuple(float(c) for c in p) for p in data[name])
        if "n_agents" not in data and "density" in data:
            size = float(data.get("arena_size", 10.0))
            data["n_agents"] = max(1, round(PRESET_DENSITY[data["density"]] * size**2))
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _initial_positions(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    n, size = spec.n_agents, spec.arena_size
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    step = size / max(cols, rows)
    cells = [(c, r) for r in range(rows) for c in range(cols)]
    chosen = rng.permutation(len(cells))[:n]
    jitter = rng.uniform(-0.15, 0.15, size=(n, 2)) * step
    grid = np.array([cells[i] for i in chosen], dtype=float)
    return (grid + 0.5) * step + jitter


def _spawn_point(spec, rng, occupied, edge_x=None):
    size = spec.arena_size
    for _ in range(20):
        if edge_x is not None:
            p = np.array([edge_x, rng.uniform(0, size)])
        else:
            side = rng.integers(4)
            s = rng.uniform(0, size)
            p = np.array([[0, s], [size, s], [s, 0], [s, size]][side], dtype=float)
        if len(occupied) == 0 or np.min(np.linalg.norm(occupied - p, axis=1)) >= 1.0:
            return p
    return None


def simulate(spec: ScenarioSpec) -> Scene:
    """Explicit-Euler social-force crowd at the scene frame rate.

    Goal topology follows the interaction class. Directional agents cross
    the arena along x and leave at the far edge; converging agents head for
    the centre and leave when within 1 m of it; multidirectional agents pick
    a new random goal whenever they reach one. Leavers are replaced by new
    agents (fresh ids) entering at an edge, so density stays roughly level.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.arena_size
    n = spec.n_agents
    dt = 1.0 / spec.fps
    n_frames = max(1, int(round(spec.duration * spec.fps)))
    centre = np.array([size / 2, size / 2])

    if spec.starts is not None:
        pos = np.array(spec.starts, dtype=float)
    else:
        pos = _initial_positions(spec, rng)
    if spec.goals is not None:
        goals = np.array(spec.goals, dtype=float)
    elif spec.interaction == "directional":
        heading_pos = rng.random(n) < 0.5
        goals = np.column_stack([np.where(heading_pos, size, 0.0), pos[:, 1]])
    elif spec.interaction == "converging":
        goals = np.tile(centre, (n, 1))
    else:
        goals = rng.uniform(0, size, size=(n, 2))
    fixed_goals = spec.goals is not None

    def desired(p, g):
        d = g - p
        norm = np.linalg.norm(d, axis=1, keepdims=True)
        return np.where(norm > 1e-9, d / np.maximum(norm, 1e-9), 0.0) * spec.desired_speed

    vel = desired(pos, goals)
    ids = np.arange(n)
    next_id = n
    alive = np.ones(n, dtype=bool)
    tracks: dict[int, tuple[int, list]] = {int(i): (0, [tuple(pos[i])]) for i in range(n)}

    for frame in range(1, n_frames):
        acc = (desired(pos, goals) - vel) / spec.relax_time
        if spec.repulsion and n > 1:
            diff = pos[:, None, :] - pos[None, :, :]
            dist = np.linalg.norm(diff, axis=2)
            live = alive[:, None] & alive[None, :]
            np.fill_diagonal(live, False)
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(dist[..., None] > 0, diff / dist[..., None], 0.0)
            mag = np.where(
                live,
                spec.repulsion_strength * np.exp((spec.agent_radius - dist) / spec.repulsion_range),
                0.0,
            )
            acc += np.sum(mag[..., None] * unit, axis=1)
        vel = vel + acc * dt
        speed = np.linalg.norm(vel, axis=1, keepdims=True)
        cap = 1.3 * spec.desired_speed
        vel = np.where(speed > cap, vel / np.maximum(speed, 1e-12) * cap, vel)
        pos = pos + vel * dt

        for i in range(n):
            if not alive[i]:
                continue
            reach = np.linalg.norm(goals[i] - pos[i])
            leave = False
            if fixed_goals:
                leave = False
            elif spec.interaction == "directional":
                leave = pos[i, 0] < 0 or pos[i, 0] > size
            elif spec.interaction == "converging":
                leave = reach < 1.0
            elif reach < 0.5:
                goals[i] = rng.uniform(0, size, 2)
            if leave:
                alive[i] = False
            else:
                tracks[int(ids[i])][1].append(tuple(pos[i]))

        for i in np.flatnonzero(~alive):
            others = pos[alive]
            if spec.interaction == "directional":
                edge = 0.0 if goals[i, 0] > 0 else size
                p = _spawn_point(spec, rng, others, edge_x=edge)
                g = np.array([size - edge, p[1]]) if p is not None else None
            else:
                p = _spawn_point(spec, rng, others)
                g = centre.copy()
            if p is None:
                continue
            pos[i], goals[i] = p, g
            vel[i] = desired(p[None], g[None])[0]
            alive[i] = True
            ids[i] = next_id
            tracks[next_id] = (frame, [tuple(p)])
            next_id += 1

    trajs = tuple(Trajectory(aid, start, pts) for aid, (start, pts) in tracks.items())
    name = f"{spec.density}-{spec.interaction}-seed{spec.seed}"
    return Scene(trajs, fps=spec.fps, frame_count=n_frames, name=name)


# --------------------------------------------------------------------------
# Analytic fixtures

def _line(agent_id, start, velocity, n, fps, start_frame=0):
    t = np.arange(n)[:, None] / fps
    return Trajectory(agent_id, start_frame, np.asarray(start, float) + t * np.asarray(velocity, float))


def ring_radius_for_density(density: float, k: int = 4) -> float:
    """Circumradius of a regular pentagon whose vertices have this 4-NN density."""
    r_knn = math.sqrt(k / (math.pi * density))
    return r_knn / (2 * math.sin(2 * math.pi / 5))


def slowdown_speed(density: float, free_speed: float = 1.4, jam_density: float = 5.4) -> float:
    return max(0.0, free_speed * (1.0 - density / jam_density))


def planted_fd_scene(densities=None, fps: float = 10.0, n_frames: int = 40) -> Scene:
    """Pentagon platoons, each at one density and moving at the slowdown-law speed.

    Every vertex of a regular pentagon has the same 4th-nearest distance, so
    all five walkers share one local density.
    """
    if densities is None:
        densities = np.arange(0.25, 5.0, 0.5)
    trajs = []
    aid = 0
    for p, rho in enumerate(densities):
        R = ring_radius_for_density(rho)
        v = slowdown_speed(rho)
        centre = np.array([0.0, 60.0 * p])
        for j in range(5):
            ang = 2 * math.pi * j / 5
            start = centre + R * np.array([math.cos(ang), math.sin(ang)])
            trajs.append(_line(aid, start, (v, 0.0), n_frames, fps))
            aid += 1
    return Scene(tuple(trajs), fps=fps, name="planted_fd")


def lattice_scene(spacing: float = 0.75, rows: int = 4, cols: int = 4, speed: float = 1.3,
                  fps: float = 10.0, n_frames: int = 30, name: str = "lattice") -> Scene:
    trajs = []
    for r in range(rows):
        for c in range(cols):
            trajs.append(_line(r * cols + c, (c * spacing, r * spacing), (speed, 0.0), n_frames, fps))
    return Scene(tuple(trajs), fps=fps, name=name)


def degenerate_fixtures(fps: float = 10.0) -> dict[str, Scene]:
    """Named scenes with hand-computable metric values."""
    out = {}
    out["single_line"] = Scene((_line(0, (0, 0), (1.0, 0.0), 31, fps),), fps=fps, name="single_line")
    pair = tuple(Trajectory(i, 0, np.zeros((20, 2))) for i in range(2))
    out["colocated_pair"] = Scene(pair, fps=fps, name="colocated_pair")
    theta = np.linspace(0.0, 2 * math.pi, 101)
    circle = np.column_stack([2 * np.cos(theta), 2 * np.sin(theta)])
    out["circle"] = Scene((Trajectory(0, 0, circle),), fps=fps, name="circle")
    out["lattice_0p75"] = lattice_scene(0.75, name="lattice_0p75", fps=fps)
    out["parallel_walkers"] = Scene(
        (_line(0, (0, 0), (1.0, 0.0), 25, fps), _line(1, (0, 1), (1.0, 0.0), 25, fps)),
        fps=fps,
        name="parallel_walkers",
    )
    out["side_by_side_pair"] = Scene(
        (_line(0, (0, 0), (1.3, 0.0), 30, fps), _line(1, (0, 0.6), (1.3, 0.0), 30, fps)),
        fps=fps,
        name="side_by_side_pair",
    )
    out["stationary_group"] = Scene(
        tuple(Trajectory(i, 0, np.tile([[2.0 * i, 0.0]], (20, 1))) for i in range(4)),
        fps=fps,
        name="stationary_group",
    )
    out["planted_fd"] = planted_fd_scene(fps=fps)
    return out
