"""Command-line pipeline: project / reconstruct tracks, score scenes, synthesize fixtures.

Exit codes: 0 success (a discarded clip counts as success), 1 internal
error, 2 usage or validation error. Errors are printed to stderr as JSON
``{"code": ..., "message": ..., "context": ...}``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from pathlib import Path

from . import geometry as geo
from .config import Config, default_config, load_config, tomllib
from .metrics import I2V, T2V, as_prepared, evaluate, fundamental_diagram, nn_polar_histogram
from .reconstruct import project_tracklets_i2v, reconstruct_t2v
from .synthgen import ScenarioSpec, simulate
from .trajdata import (
    ParseError,
    ValidationError,
    accumulation_check,
    parse_tracklets,
    read_scene,
    scene_statistics,
    write_scene,
)

log = logging.getLogger("pedeval")


class CliError(Exception):
    def __init__(self, code: int, message: str, context=None):
        super().__init__(message)
        self.code = code
        self.message = message
        self.context = context or {}


def _fail(code, message, **context):
    raise CliError(code, message, context)


def _read_bytes(path: str) -> bytes:
    p = Path(path)
    if not p.is_file():
        _fail(2, f"file not found: {path}", path=path)
    return p.read_bytes()


def _image_size(text: str) -> tuple[float, float]:
    m = re.fullmatch(r"\s*(\d+(?:\.\d*)?)\s*[xX,]\s*(\d+(?:\.\d*)?)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}")
    return float(m.group(1)), float(m.group(2))


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if getattr(args, "config", None) else default_config()
    if getattr(args, "seed", None) is not None:
        cfg = Config(cfg.kalman, cfg.geometry, cfg.metrics, cfg.accumulation, seed=args.seed)
    return cfg


def _write_text(path: str | None, text: str):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _depth_dir(path: str | None) -> dict[int, geo.DepthRaster]:
    """``*.pfm`` files named by their 0-based frame number."""
    if path is None:
        return {}
    d = Path(path)
    if not d.is_dir():
        _fail(2, f"depth directory not found: {path}", path=path)
    out = {}
    for f in sorted(d.glob("*.pfm")):
        m = re.search(r"(\d+)$", f.stem)
        if m:
            out[int(m.group(1))] = geo.load_pfm(f)
    return out


# --------------------------------------------------------------------------

def cmd_project_i2v(args) -> int:
    cfg = _load_cfg(args)
    tracklets = parse_tracklets(_read_bytes(args.tracklets), args.image_size)
    homography = geo.Homography.from_text(_read_bytes(args.homography).decode("utf-8"))
    if args.cameras:
        cams = geo.load_cameras(_read_bytes(args.cameras).decode("utf-8"))
        g = cfg.geometry
        if not geo.staticity_check(cams.values(), None, g.static_max_translation, g.static_max_rotation_deg):
            _fail(2, "camera is not static", cameras=args.cameras)
    res = project_tracklets_i2v(
        tracklets, homography, args.fps, split_gaps=args.split_gaps,
        min_w=cfg.geometry.homography_min_w, name=Path(args.tracklets).stem,
    )
    _write_text(args.out, write_scene(res.scene))
    log.info("projected %d agents, %d points dropped, %d tracks split",
             len(res.scene), res.dropped, res.split_tracks)
    return 0


def cmd_reconstruct_t2v(args) -> int:
    cfg = _load_cfg(args)
    if args.keyframe_stride is not None:
        cfg = cfg.override("geometry", keyframe_stride=args.keyframe_stride)
    tracklets = parse_tracklets(_read_bytes(args.tracklets), args.image_size)
    cams = geo.load_cameras(_read_bytes(args.cameras).decode("utf-8"))
    rel = _depth_dir(args.depth_dir)
    metric = _depth_dir(args.metric_depth_dir)
    conf = _depth_dir(args.geo_conf_dir) if args.geo_conf_dir else None
    res = reconstruct_t2v(tracklets, cams, rel, metric, args.fps, cfg, conf, name=Path(args.tracklets).stem)
    if args.diagnostics_out:
        _write_text(args.diagnostics_out, json.dumps(res.diagnostics, sort_keys=True, indent=2) + "\n")
    if res.rejected:
        target = args.rejection_out or f"{args.out}.rejected.json"
        _write_text(target, json.dumps(res.rejection_record(), sort_keys=True, indent=2) + "\n")
        log.warning("clip discarded: %s", res.reason)
        return 0
    _write_text(args.out, write_scene(res.scene))
    return 0


def _load_scenes(paths) -> list:
    return [read_scene(_read_bytes(p), name=Path(p).stem) for p in paths]


def _write_plots(directory: Path, prefix: str, scenes, cfg: Config):
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / f"{prefix}fundamental_diagram.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "density_lo", "density_hi", "count",
                    "speed_median", "speed_q1", "speed_q3", "flow_median", "flow_q1", "flow_q3"])
        for i, b in enumerate(fundamental_diagram(scenes, cfg)):
            if b is None:
                continue
            w.writerow([i, repr(b.lo), repr(b.hi), b.count,
                        repr(b.speed[1]), repr(b.speed[0]), repr(b.speed[2]),
                        repr(b.flow[1]), repr(b.flow[0]), repr(b.flow[2])])
    hist = nn_polar_histogram(scenes, cfg)
    with open(directory / f"{prefix}nn_polar.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["angle_bin", "radius_bin", "angle_lo_deg", "radius_lo_m", "mass"])
        for a, r, mass in hist.rows():
            w.writerow([a, r, repr(float(hist.angle_edges[a])), repr(float(hist.radius_edges[r])), repr(mass)])


def cmd_metrics(args) -> int:
    cfg = _load_cfg(args)
    mode = args.mode
    if mode == I2V and not args.gt:
        _fail(2, "--mode i2v needs --gt scenes")
    if mode == T2V and args.gt:
        _fail(2, "--mode t2v takes no --gt scenes")
    gen = as_prepared(_load_scenes(args.gen), cfg)
    gt = as_prepared(_load_scenes(args.gt), cfg) if args.gt else None
    report = evaluate(gen, gt, mode, cfg)
    _write_text(args.out, report.to_json())
    if args.plots_out:
        d = Path(args.plots_out)
        _write_plots(d, "", gen, cfg)
        if gt is not None:
            _write_plots(d, "gt_", gt, cfg)
    return 0


def cmd_synth(args) -> int:
    raw = _read_bytes(args.spec).decode("utf-8")
    try:
        data = json.loads(raw) if args.spec.endswith(".json") else tomllib.loads(raw)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        _fail(2, f"invalid scenario file: {exc}", path=args.spec)
    data = data.get("scenario", data)
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        spec = ScenarioSpec.from_dict(data)
    except (TypeError, ValueError, KeyError) as exc:
        _fail(2, f"invalid scenario: {exc}", path=args.spec)
    _write_text(args.out, write_scene(simulate(spec)))
    return 0


def cmd_stats(args) -> int:
    cfg = _load_cfg(args)
    scenes = _load_scenes(args.scenes)
    per = {}
    for s in scenes:
        st = scene_statistics(s)
        per[s.name] = {"n_detections": st.n_detections, "n_unique": st.n_unique,
                       "detections_per_frame": st.detections_per_frame, "frames": s.frame_count}
    total_det = sum(v["n_detections"] for v in per.values())
    total_frames = sum(v["frames"] for v in per.values())
    a = cfg.accumulation
    out = {
        "scenes": per,
        "total": {
            "n_detections": total_det,
            "n_unique": sum(v["n_unique"] for v in per.values()),
            "detections_per_frame": total_det / total_frames if total_frames else 0.0,
        },
        "accumulation_ok": accumulation_check(scenes, a.min_unique_tracks, a.min_detections),
    }
    _write_text(args.out, json.dumps(out, sort_keys=True, indent=2) + "\n")
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file overriding default thresholds")
    common.add_argument("--seed", type=int, help="seed for every random choice")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pedeval", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project-i2v", parents=[common], help="pixel tracks -> BEV via homography")
    p.add_argument("--tracklets", required=True)
    p.add_argument("--homography", required=True)
    p.add_argument("--fps", type=float, required=True)
    p.add_argument("--image-size", type=_image_size, required=True, metavar="WxH")
    p.add_argument("--cameras", help="optional camera JSON for the static-viewpoint check")
    p.add_argument("--split-gaps", action="store_true", help="give a fresh id to each piece of a gapped track")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project_i2v)

    p = sub.add_parser("reconstruct-t2v", parents=[common], help="pixel tracks -> BEV via depth + cameras")
    p.add_argument("--tracklets", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--depth-dir", required=True, help="relative depth PFMs, one per frame")
    p.add_argument("--metric-depth-dir", required=True, help="metric depth PFMs for keyframes")
    p.add_argument("--geo-conf-dir", help="per-frame reconstruction confidence PFMs")
    p.add_argument("--fps", type=float, required=True)
    p.add_argument("--image-size", type=_image_size, required=True, metavar="WxH")
    p.add_argument("--keyframe-stride", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--rejection-out")
    p.add_argument("--diagnostics-out")
    p.set_defaults(func=cmd_reconstruct_t2v)

    p = sub.add_parser("metrics", parents=[common], help="score generated scenes")
    p.add_argument("--gen", nargs="+", required=True)
    p.add_argument("--gt", nargs="*", default=[])
    p.add_argument("--mode", choices=[I2V, T2V], required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--plots-out", metavar="DIR")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", parents=[common], help="simulate a synthetic crowd scene")
    p.add_argument("--spec", required=True, help="scenario file (.toml or .json)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", parents=[common], help="detection counts and accumulation check")
    p.add_argument("scenes", nargs="+")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_stats)
    return parser


def _emit_error(code: int, message: str, context=None):
    sys.stderr.write(json.dumps({"code": code, "message": message, "context": context or {}}, sort_keys=True) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        _emit_error(exc.code, exc.message, exc.context)
        return exc.code
    except (ParseError, ValidationError, geo.GeometryError, ValueError) as exc:
        _emit_error(2, str(exc), {"type": type(exc).__name__})
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        _emit_error(1, str(exc), {"type": type(exc).__name__})
        return 1


if __name__ == "__main__":
    sys.exit(main())
