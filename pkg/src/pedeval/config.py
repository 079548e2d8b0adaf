"""Thresholds and tunables for reconstruction, smoothing and scoring.

Every value lives in one place so that a run's report can echo the exact
configuration it used. A TOML file may override any field::

    [metrics]
    collision_threshold = 0.1

    [geometry]
    ransac_iterations = 400
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class KalmanConfig:
    sigma_accel: float = 1.0  # process noise, m/s^2
    sigma_meas: float = 0.1  # measurement noise, m
    init_vel_var: float = 10.0  # (m/s)^2


@dataclass(frozen=True)
class GeometryConfig:
    min_valid_pixels: int = 100
    min_inlier_fraction: float = 0.30
    residual_fraction: float = 0.10  # of the median metric depth
    huber_delta: float = 0.5  # m
    ransac_iterations: int = 200
    ransac_sample_size: int = 50
    irls_steps: int = 10
    keyframe_stride: int = 8
    depth_search_radius: int = 3  # px
    height_min: float = 1.4  # m, open interval
    height_max: float = 2.0
    height_target: float = 1.7
    plane_inlier_threshold: float = 0.2  # m
    plane_iterations: int = 200
    static_max_translation: float = 0.05  # m
    static_max_rotation_deg: float = 0.5
    homography_min_w: float = 1e-12


@dataclass(frozen=True)
class MetricsConfig:
    collision_threshold: float = 0.1  # m
    stationary_threshold: float = 0.2  # m
    moving_speed: float = 0.1  # m/s
    density_neighbors: int = 4
    nn_radius: float = 10.0  # m
    kde_bandwidth: str | float = "silverman"
    kde_grid_size: int = 512
    internal_diversity_subsample: int = 200
    dtw_band: int | None = None
    geo_conf_low: float = 1.5
    fd_max_density: float = 5.0  # ped/m^2
    fd_bins: int = 10
    polar_angle_bins: int = 36
    polar_max_radius: float = 5.0  # m
    polar_radius_bins: int = 20


@dataclass(frozen=True)
class AccumulationConfig:
    min_unique_tracks: int = 150
    min_detections: int = 1500


# Fruin level-of-service lower bounds for grades B..F, ped/m^2
LOS_THRESHOLDS = (0.83, 1.08, 1.79, 3.59, 5.38)
LOS_GRADES = ("A", "B", "C", "D", "E", "F")


@dataclass(frozen=True)
class Config:
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    accumulation: AccumulationConfig = field(default_factory=AccumulationConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def override(self, section: str, **values) -> Config:
        return replace(self, **{section: replace(getattr(self, section), **values)})


def default_config() -> Config:
    return Config()


def _section_from_dict(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> Config:
    sections = {
        "kalman": KalmanConfig,
        "geometry": GeometryConfig,
        "metrics": MetricsConfig,
        "accumulation": AccumulationConfig,
    }
    kwargs = {}
    for key, value in data.items():
        if key == "seed":
            kwargs["seed"] = int(value)
        elif key in sections:
            kwargs[key] = _section_from_dict(sections[key], dict(value), key)
        else:
            raise ValueError(f"unknown config section: {key!r}")
    return Config(**kwargs)


def load_config(path: str | Path) -> Config:
    with open(path, "rb") as fh:
        return config_from_dict(tomllib.load(fh))
