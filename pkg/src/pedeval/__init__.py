"""Metric-scale pedestrian trajectories from tracker output, and a realism
metric suite for generated crowd scenes."""

from .config import Config, default_config, load_config
from .metrics import MetricReport, evaluate
from .trajdata import Scene, TrackletSet, Trajectory, parse_tracklets, read_scene, write_scene

__all__ = [
    "Config",
    "MetricReport",
    "Scene",
    "TrackletSet",
    "Trajectory",
    "default_config",
    "evaluate",
    "load_config",
    "parse_tracklets",
    "read_scene",
    "write_scene",
]
