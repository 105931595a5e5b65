"""Command-line entry point: ``tubekit <subcommand> [flags]``.

Configuration is resolved as defaults < config file < flags. The config file is
``--config PATH`` or, failing that, ``$TUBEKIT_CONFIG``. Every run logs the
resolved config to stderr; commands that write a directory also store it as
``config.json`` so the run can be repeated with ``--config``.

Exit codes: 0 success, 1 a check failed (gradcheck), 2 usage error,
3 malformed or unreadable input file, 4 invalid or inconsistent values.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import io as tio
from .core import GridSpec
from .decoder import MODES, decode_tubelets
from .encoder import encode_clip
from .gradcheck import run_gradcheck
from .linker import StreamSession, link_tubelets
from .pipeline import (RunConfig, evaluate, format_table, make_videos, run_pipeline,
                       window_maps)

logger = logging.getLogger("tubekit")

CONFIG_ENV = "TUBEKIT_CONFIG"
EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_MALFORMED, EXIT_INVALID = 0, 1, 2, 3, 4
GRADCHECK_TOLERANCE = 1e-4

# flag -> RunConfig field
_FLAG_FIELDS = {
    "k": "K", "width": "W", "height": "H", "r": "R", "c": "C", "key_index": "key_index",
    "n": "N", "tau": "tau", "a": "a", "b": "b", "alpha": "alpha", "beta": "beta",
    "min_score": "min_score", "min_length": "min_length", "mode": "mode",
    "thresholds": "thresholds", "seed": "seed", "workers": "workers",
    "num_videos": "num_videos", "noise": "noise", "heatmap": "heatmap",
    "footprint": "footprint", "overlap_mode": "overlap_mode", "bridge_gaps": "bridge_gaps",
    "box_normalize": "box_normalize",
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    g = p.add_argument_group("run configuration (overrides the config file)")
    g.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    g.add_argument("--k", type=int, help="frames per clip K")
    g.add_argument("--width", type=int, help="input width W (pixels)")
    g.add_argument("--height", type=int, help="input height H (pixels)")
    g.add_argument("--r", "--ratio", dest="r", type=int, help="downsample ratio R")
    g.add_argument("--c", "--classes", dest="c", type=int, help="number of classes C")
    g.add_argument("--key-index", type=int)
    g.add_argument("--n", "--top-n", dest="n", type=int, help="peaks kept per window")
    g.add_argument("--tau", type=float, help="link overlap threshold")
    g.add_argument("--a", type=float, help="movement loss weight")
    g.add_argument("--b", type=float, help="box loss weight")
    g.add_argument("--alpha", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--min-score", type=float)
    g.add_argument("--min-length", type=int)
    g.add_argument("--mode", choices=MODES)
    g.add_argument("--thresholds", type=float, nargs="+", help="video-mAP IoU thresholds")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int, help="parallel worker processes (per video)")
    g.add_argument("--num-videos", type=int)
    g.add_argument("--noise", type=float, nargs="+",
                   help="noise sigma: one value or heatmap/movement/size triple")
    g.add_argument("--heatmap", choices=("gaussian", "binary"))
    g.add_argument("--footprint", choices=("sparse", "box"))
    g.add_argument("--overlap-mode", choices=("tail", "mean"))
    g.add_argument("--bridge-gaps", action=argparse.BooleanOptionalAction)
    g.add_argument("--box-normalize", choices=("n", "nk"))
    g.add_argument("--scene", help="JSON file with scene-generator overrides")
    p.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"),
                   help="stderr logging level (default INFO)")
    return p


def _load_json(path) -> object:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CliError(EXIT_MALFORMED, f"{path}: no such file") from exc
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CliError(EXIT_MALFORMED, f"{path}: not valid JSON: {exc}") from exc


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    values: Dict[str, object] = {}
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        doc = _load_json(path)
        if not isinstance(doc, dict):
            raise CliError(EXIT_MALFORMED, f"{path}: config must be a JSON object")
        values.update(doc)
    for flag, name in _FLAG_FIELDS.items():
        if hasattr(args, flag):
            values[name] = getattr(args, flag)
    if hasattr(args, "scene"):
        scene = _load_json(args.scene)
        if not isinstance(scene, dict):
            raise CliError(EXIT_MALFORMED, f"{args.scene}: scene must be a JSON object")
        values["scene"] = {**dict(values.get("scene") or {}), **scene}
    if isinstance(values.get("noise"), list) and len(values["noise"]) == 1:
        values["noise"] = values["noise"][0]
    args.explicit = set(values)
    try:
        cfg = RunConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_INVALID, f"invalid configuration: {exc}") from exc
    if cfg.K % 2 == 0:
        logger.warning("K=%d is even; the key frame is index %d (floor(K/2))",
                       cfg.K, cfg.grid().key_index)
    return cfg


def echo_config(cfg: RunConfig) -> None:
    logger.info("resolved config: %s", json.dumps(cfg.resolved(), sort_keys=True))


def _write_config(cfg: RunConfig, out_dir: Path) -> None:
    tio.atomic_write_text(out_dir / "config.json", tio.dumps(cfg.resolved()))


def _adopt_frame_size(cfg: RunConfig, explicit, video) -> RunConfig:
    """Take W/H from the annotation unless configured; configured values must agree."""
    changes = {}
    for name, value in (("W", video.W), ("H", video.H)):
        if name in explicit and getattr(cfg, name) != value:
            raise CliError(EXIT_INVALID, f"inconsistent dims: config {name}={getattr(cfg, name)} "
                                         f"but {video.video_id} has {name}={value}")
        changes[name] = value
    data = cfg.resolved()
    data.update(changes)
    if "key_index" not in explicit:
        data["key_index"] = None
    try:
        return RunConfig.from_dict(data)
    except ValueError as exc:
        raise CliError(EXIT_INVALID, f"inconsistent dims: {exc}") from exc


def _window_name(start: int, kind: str) -> str:
    return f"w{start:05d}_{kind}.moct"


def _to_f32(arr) -> np.ndarray:
    return np.asarray(arr, dtype=np.float32)


# --------------------------------------------------------------------------- synth

def _synth_one(job):
    video, index, cfg, out_dir, with_maps = job
    vdir = out_dir / video.video_id
    tio.write_annotations(video, vdir / "annotations.json")
    if with_maps:
        for start in range(video.num_frames - cfg.K + 1):
            heat, movement, sizes = window_maps(video, index, start, cfg)
            tio.write_tensor(_to_f32(heat), vdir / "maps" / _window_name(start, "heatmap"))
            tio.write_tensor(_to_f32(movement), vdir / "maps" / _window_name(start, "movement"))
            tio.write_tensor(_to_f32(sizes), vdir / "maps" / _window_name(start, "sizes"))
    return video.video_id


def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    videos = make_videos(cfg)
    jobs = [(v, i, cfg, out, not args.no_maps) for i, v in enumerate(videos)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            ids = list(pool.map(_synth_one, jobs))
    else:
        ids = [_synth_one(job) for job in jobs]
    _write_config(cfg, out)
    for vid in ids:
        print(out / vid / "annotations.json")
    return EXIT_OK


# --------------------------------------------------------------------------- encode

def cmd_encode(args, cfg: RunConfig) -> int:
    video = tio.read_annotations(args.annotations)
    cfg = _adopt_frame_size(cfg, args.explicit, video)
    spec = cfg.grid()
    starts = [args.start] if args.start is not None else range(video.num_frames - spec.K + 1)
    out = Path(args.out)
    for start in starts:
        if not 0 <= start <= video.num_frames - spec.K:
            raise CliError(EXIT_INVALID, f"window start {start} does not fit a "
                                         f"{video.num_frames}-frame video with K={spec.K}")
        targets = encode_clip(video.instances, start, spec)
        tio.write_tensor(_to_f32(targets.center_heatmap), out / _window_name(start, "center"))
        sidecar = {"video_id": video.video_id, "start_frame": start, "grid": spec.as_dict(),
                   "n": targets.n, **targets.sidecar()}
        tio.atomic_write_text(out / f"w{start:05d}_targets.json", tio.dumps(sidecar))
    print(f"encoded {len(starts)} window(s) into {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- gradcheck

def cmd_gradcheck(args, cfg: RunConfig) -> int:
    results = run_gradcheck(cfg.seed, args.cells)
    ok = True
    for r in results.values():
        passed = r.max_rel_error < GRADCHECK_TOLERANCE and r.cells >= min(args.cells, 100)
        ok &= passed
        print(f"{r.name:<9} cells={r.cells:<4d} max_rel_error={r.max_rel_error:.3e}  "
              f"{'ok' if passed else 'FAIL'}")
    if args.out:
        doc = {"tolerance": GRADCHECK_TOLERANCE, "seed": cfg.seed,
               "results": [r.as_dict() for r in results.values()]}
        tio.atomic_write_text(args.out, tio.dumps(doc))
    return EXIT_OK if ok else EXIT_CHECK


# --------------------------------------------------------------------------- decode

def _check_dims(name: str, arr: np.ndarray, expected) -> None:
    if arr.shape != tuple(expected):
        raise CliError(EXIT_INVALID, f"inconsistent dims: {name} is {arr.shape}, "
                                     f"config expects {tuple(expected)}")


def _read_window(maps_dir: Path, start: int, spec: GridSpec):
    heat = tio.read_tensor(maps_dir / _window_name(start, "heatmap"))
    movement = tio.read_tensor(maps_dir / _window_name(start, "movement"))
    sizes = tio.read_tensor(maps_dir / _window_name(start, "sizes"))
    _check_dims("heatmap", heat, (spec.Hg, spec.Wg, spec.C))
    _check_dims("movement map", movement, (spec.Hg, spec.Wg, 2 * spec.K))
    _check_dims("size maps", sizes, (spec.K, spec.Hg, spec.Wg, 2))
    return heat, movement, sizes


def _window_starts(maps_dir: Path) -> List[int]:
    starts = sorted({int(p.name[1:6]) for p in maps_dir.glob("w?????_heatmap.moct")})
    if not starts:
        raise CliError(EXIT_MALFORMED, f"{maps_dir}: no w*_heatmap.moct files")
    return starts


def cmd_decode(args, cfg: RunConfig) -> int:
    spec = cfg.grid()
    tubelets = []
    if args.maps:
        maps_dir = Path(args.maps)
        for start in _window_starts(maps_dir):
            maps = _read_window(maps_dir, start, spec)
            tubelets += decode_tubelets(*maps, spec, cfg.N, cfg.mode, start)
    else:
        if not (args.heatmap_file and args.movement_file and args.sizes_file):
            raise CliError(EXIT_USAGE, "decode needs --maps DIR or all of "
                                       "--heatmap-file/--movement-file/--sizes-file")
        heat = tio.read_tensor(args.heatmap_file)
        movement = tio.read_tensor(args.movement_file)
        sizes = tio.read_tensor(args.sizes_file)
        _check_dims("heatmap", heat, (spec.Hg, spec.Wg, spec.C))
        _check_dims("movement map", movement, (spec.Hg, spec.Wg, 2 * spec.K))
        _check_dims("size maps", sizes, (spec.K, spec.Hg, spec.Wg, 2))
        tubelets = decode_tubelets(heat, movement, sizes, spec, cfg.N, cfg.mode, args.start)
    tio.write_tubelets(tubelets, args.out)
    print(f"{len(tubelets)} tubelets -> {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------- link

def cmd_link(args, cfg: RunConfig) -> int:
    tubelets = tio.read_tubelets(args.tubelets)
    by_frame: Dict[int, list] = {}
    for t in tubelets:
        if t.K != cfg.K:
            raise CliError(EXIT_INVALID, f"inconsistent dims: tubelet of {t.K} frames, K={cfg.K}")
        by_frame.setdefault(t.start_frame, []).append(t)
    tubes = link_tubelets(by_frame, cfg.K, **cfg.linker_kwargs())
    vid = args.video_id or Path(args.tubelets).stem
    tio.write_tubes({vid: tubes}, args.out)
    print(f"{len(tubes)} tubes -> {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------- stream

def cmd_stream(args, cfg: RunConfig) -> int:
    video = tio.read_annotations(args.annotations)
    cfg = _adopt_frame_size(cfg, args.explicit, video)
    spec = cfg.grid()
    if args.maps:
        maps_dir = Path(args.maps)
        head = lambda start, frames: _read_window(maps_dir, start, spec)  # noqa: E731
    else:
        head = lambda start, frames: window_maps(video, args.video_index, start, cfg)  # noqa: E731
    session = StreamSession(spec, head, N=cfg.N, mode=cfg.mode, **cfg.linker_kwargs())
    latencies = []
    for frame in range(video.num_frames):
        t0 = time.perf_counter()
        emitted = session.push(frame)
        latencies.append(time.perf_counter() - t0)
        if args.latency_report:
            print(f"frame {frame:5d}  {1e3 * latencies[-1]:8.3f} ms  emitted {len(emitted)}",
                  file=sys.stderr)
    session.close()
    tio.write_tubes({video.video_id: session.emitted}, args.out)
    if latencies:
        ms = 1e3 * np.array(latencies)
        logger.info("stream latency over %d frames: mean %.3f ms, p95 %.3f ms, max %.3f ms "
                    "(buffer peak %d frames)", len(ms), ms.mean(), np.percentile(ms, 95),
                    ms.max(), session.max_buffered)
    print(f"{len(session.emitted)} tubes -> {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------- eval

def cmd_eval(args, cfg: RunConfig) -> int:
    tubes = tio.read_tubes(args.tubes)
    videos = [tio.read_annotations(p) for p in args.annotations]
    ids = {v.video_id for v in videos}
    if len(ids) != len(videos):
        raise CliError(EXIT_INVALID, "duplicate video_id among annotation files")
    unknown = sorted(set(tubes) - ids)
    if unknown:
        raise CliError(EXIT_INVALID, f"tubes for videos without annotations: {unknown}")
    tubes = {v.video_id: tubes.get(v.video_id, []) for v in videos}
    metrics = evaluate(videos, tubes, cfg, errors=args.errors)
    print(format_table(metrics))
    if args.out:
        tio.atomic_write_text(args.out, tio.dumps(metrics))
    return EXIT_OK


# --------------------------------------------------------------------------- pipeline

def cmd_pipeline(args, cfg: RunConfig) -> int:
    videos, tubes, metrics = run_pipeline(cfg, errors=args.errors, losses=True)
    print(format_table(metrics))
    if args.out:
        out = Path(args.out)
        _write_config(cfg, out)
        for v in videos:
            tio.write_annotations(v, out / "annotations" / f"{v.video_id}.json")
        tio.write_tubes(tubes, out / "tubes.json")
        tio.atomic_write_text(out / "metrics.json", tio.dumps(metrics))
    return EXIT_OK


# --------------------------------------------------------------------------- overlay

def _parse_frames(text: Optional[str], num_frames: int):
    if text is None:
        return None
    try:
        if ":" in text:
            lo, hi = text.split(":", 1)
            return range(int(lo or 0), int(hi) if hi else num_frames)
        return [int(f) for f in text.split(",")]
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"bad --frames value {text!r}") from exc


def cmd_overlay(args, cfg: RunConfig) -> int:
    from .overlay import write_overlays

    video = tio.read_annotations(args.annotations)
    tubes = tio.read_tubes(args.tubes).get(video.video_id, []) if args.tubes else []
    paths = write_overlays(video, tubes, args.out, _parse_frames(args.frames, video.num_frames),
                           args.scale)
    print(f"{len(paths)} frame image(s) -> {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _config_parent()
    parser = argparse.ArgumentParser(prog="tubekit", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate synthetic videos: annotations plus per-window maps")
    p.add_argument("--out", required=True)
    p.add_argument("--no-maps", action="store_true", help="write annotations only")

    p = add("encode", cmd_encode, "ground-truth heatmap tensors and target sidecars")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--start", type=int, default=None, help="single window start (default: all)")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every loss gradient")
    p.add_argument("--cells", type=int, default=200)
    p.add_argument("--out", default=None)

    p = add("decode", cmd_decode, "decode map tensors into tubelets (JSON lines)")
    p.add_argument("--maps", default=None, help="directory of w*_{heatmap,movement,sizes}.moct")
    p.add_argument("--heatmap-file", default=None)
    p.add_argument("--movement-file", default=None)
    p.add_argument("--sizes-file", default=None)
    p.add_argument("--start", type=int, default=0, help="start frame for single-window input")
    p.add_argument("--out", required=True)

    p = add("link", cmd_link, "link tubelets into tubes")
    p.add_argument("--tubelets", required=True)
    p.add_argument("--video-id", default=None)
    p.add_argument("--out", required=True)

    p = add("stream", cmd_stream, "frame-by-frame online session with latency reporting")
    p.add_argument("--annotations", required=True)
    p.add_argument("--maps", default=None, help="read window maps from this directory")
    p.add_argument("--video-index", type=int, default=0,
                   help="index used to seed rendered maps (matches synth/pipeline order)")
    p.add_argument("--latency-report", action="store_true",
                   help="print per-frame latency lines to stderr")
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "frame/video mAP (and error breakdown) of tubes")
    p.add_argument("--tubes", required=True)
    p.add_argument("--annotations", required=True, nargs="+")
    p.add_argument("--errors", action="store_true")
    p.add_argument("--out", default=None, help="metric JSON path")

    p = add("pipeline", cmd_pipeline, "synth -> encode -> decode -> link -> eval in one run")
    p.add_argument("--errors", action="store_true")
    p.add_argument("--out", default=None, help="directory for config, tubes and metrics")

    p = add("overlay", cmd_overlay, "draw ground truth and tubes as PNG files")
    p.add_argument("--annotations", required=True)
    p.add_argument("--tubes", default=None)
    p.add_argument("--frames", default=None, help="'a:b' range or comma list")
    p.add_argument("--scale", type=int, default=2)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(args, "log_level", "INFO"), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        echo_config(cfg)
        return args.func(args, cfg)
    except CliError as exc:
        logger.error("%s", exc)
        return exc.code
    except tio.FormatError as exc:
        logger.error("malformed input: %s", exc)
        return EXIT_MALFORMED
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        logger.error("cannot read input: %s", exc)
        return EXIT_MALFORMED
    except ValueError as exc:
        logger.error("invalid input: %s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
