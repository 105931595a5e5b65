"""End-to-end glue: synthetic scenes -> maps -> tubelets -> tubes -> metrics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import GridSpec, Tube, Tubelet, Video
from .decoder import MODES, decode_tubelets
from .evaluator import (error_analysis, frame_ground_truth, frame_map,
                        tubes_to_frame_detections, video_map)
from .encoder import encode_clip
from .linker import StreamSession, link_tubelets
from .losses import clip_loss
from .synthgen import SceneSpec, make_video, perturb, render_perfect_maps

METRICS_SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    """Every knob of a run. Defaults follow the reference detector settings."""

    K: int = 7
    W: int = 288
    H: int = 288
    R: int = 4
    C: int = 24
    key_index: Optional[int] = None
    N: int = 100
    tau: float = 0.5
    a: float = 1.0
    b: float = 0.1
    alpha: float = 2.0
    beta: float = 4.0
    min_score: float = 0.05
    min_length: Optional[int] = None
    mode: str = "full_movement"
    thresholds: List[float] = field(default_factory=lambda: [0.2, 0.5, 0.75])
    overlap_mode: str = "tail"
    bridge_gaps: bool = True
    box_normalize: str = "n"
    seed: int = 0
    num_videos: int = 4
    workers: int = 1
    noise: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    heatmap: str = "gaussian"
    footprint: str = "sparse"
    scene: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if np.ndim(self.noise) == 0:
            self.noise = [float(self.noise)] * 3
        self.noise = [float(v) for v in self.noise]
        if len(self.noise) != 3:
            raise ValueError("noise must be a scalar or a triple")
        self.thresholds = [float(t) for t in self.thresholds]
        if self.workers < 1 or self.num_videos < 0:
            raise ValueError("workers must be >= 1 and num_videos >= 0")
        self.grid()

    def grid(self) -> GridSpec:
        return GridSpec(self.K, self.W, self.H, self.R, self.C, self.key_index)

    def resolved(self) -> dict:
        """Fully resolved config, suitable for echoing and re-running."""
        out = asdict(self)
        out["key_index"] = self.grid().key_index
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def linker_kwargs(self) -> dict:
        return {"tau": self.tau, "min_score": self.min_score, "min_length": self.min_length,
                "overlap_mode": self.overlap_mode, "bridge_gaps": self.bridge_gaps}


def derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def scene_spec(cfg: RunConfig, index: int) -> SceneSpec:
    params = {"W": cfg.W, "H": cfg.H, "num_classes": cfg.C,
              "box_size": (32, 96), "num_frames": 40, "min_separation": 96.0}
    params.update(cfg.scene)
    params["seed"] = derived_seed(cfg.seed, index)
    return SceneSpec.from_dict(params)


def make_videos(cfg: RunConfig) -> List[Video]:
    return [make_video(scene_spec(cfg, i), f"video_{i:04d}") for i in range(cfg.num_videos)]


def window_maps(video: Video, index: int, start: int, cfg: RunConfig):
    """Detector output for one window: perfect maps plus seeded noise."""
    spec = cfg.grid()
    maps = render_perfect_maps(video.instances, start, spec, cfg.heatmap, cfg.footprint)
    return perturb(maps, cfg.noise, derived_seed(cfg.seed, index, start, 7))


def detect_video(video: Video, index: int, cfg: RunConfig) -> Dict[int, List[Tubelet]]:
    spec = cfg.grid()
    out = {}
    for start in range(video.num_frames - spec.K + 1):
        heat, movement, sizes = window_maps(video, index, start, cfg)
        out[start] = decode_tubelets(heat, movement, sizes, spec, cfg.N, cfg.mode, start)
    return out


def link_video(tubelets_by_frame, cfg: RunConfig) -> List[Tube]:
    return link_tubelets(tubelets_by_frame, cfg.K, **cfg.linker_kwargs())


def stream_video(video: Video, index: int, cfg: RunConfig) -> List[Tube]:
    """Online variant: frames arrive one by one through a :class:`StreamSession`."""
    session = StreamSession(cfg.grid(), lambda start, frames: window_maps(video, index, start, cfg),
                            N=cfg.N, mode=cfg.mode, **cfg.linker_kwargs())
    for f in range(video.num_frames):
        session.push(f)
    session.close()
    return session.emitted


def window_losses(video: Video, index: int, cfg: RunConfig) -> List[float]:
    """Summed ``[center, movement, box, total]`` losses of every window's maps vs its targets."""
    spec = cfg.grid()
    sums = [0.0, 0.0, 0.0, 0.0]
    for start in range(video.num_frames - spec.K + 1):
        targets = encode_clip(video.instances, start, spec)
        report, _ = clip_loss(*window_maps(video, index, start, cfg), targets,
                              alpha=cfg.alpha, beta=cfg.beta, a=cfg.a, b=cfg.b,
                              box_normalize=cfg.box_normalize)
        for k, v in enumerate((report.l_center, report.l_movement, report.l_box, report.l_total)):
            sums[k] += v
    return sums


def _run_one(job):
    video, index, cfg, with_loss = job
    tubes = link_video(detect_video(video, index, cfg), cfg)
    return tubes, (window_losses(video, index, cfg) if with_loss else None)


def _fan_out(videos: Sequence[Video], cfg: RunConfig, with_loss: bool):
    jobs = [(v, i, cfg, with_loss) for i, v in enumerate(videos)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(job) for job in jobs]


def run_videos(videos: Sequence[Video], cfg: RunConfig) -> Dict[str, List[Tube]]:
    """Detect and link every video; ``cfg.workers > 1`` fans out over processes."""
    results = _fan_out(videos, cfg, False)
    return {v.video_id: tubes for v, (tubes, _) in zip(videos, results)}


def _loss_summary(videos: Sequence[Video], sums: Sequence[Sequence[float]], K: int) -> dict:
    windows = sum(max(v.num_frames - K + 1, 0) for v in videos)
    total = [0.0, 0.0, 0.0, 0.0]
    for s in sums:  # fixed video order keeps the reduction deterministic
        total = [a + b for a, b in zip(total, s)]
    mean = [t / windows if windows else float("nan") for t in total]
    return {"windows": windows, "center": mean[0], "movement": mean[1], "box": mean[2],
            "total": mean[3]}


def _clean(value):
    if isinstance(value, float):
        return None if math.isnan(value) else round(value, 12)
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def evaluate(videos: Sequence[Video], tubes_by_video: Dict[str, List[Tube]],
             cfg: RunConfig, errors: bool = False, losses: Optional[dict] = None) -> dict:
    """Metric document: frame mAP@0.5, video mAP table and optionally the error breakdown."""
    by_id = {v.video_id: v for v in videos}
    frame_dets = tubes_to_frame_detections(tubes_by_video)
    fm = frame_map(frame_dets, frame_ground_truth(by_id), 0.5)
    vm = video_map(tubes_by_video, {v.video_id: v.instances for v in videos}, cfg.thresholds)
    doc = {"schema_version": METRICS_SCHEMA_VERSION,
           "frame_mAP@0.5": fm["mAP"],
           "frame_AP_per_class": fm["per_class"],
           "video_mAP": {k: t["mAP"] for k, t in vm.items()},
           "video_AP_per_class": {k: t["per_class"] for k, t in vm.items() if "per_class" in t},
           "num_videos": len(videos),
           "num_tubes": sum(len(t) for t in tubes_by_video.values())}
    if losses is not None:
        doc["mean_window_loss"] = losses
    if errors:
        doc["errors"] = error_analysis(frame_dets, by_id, 0.5, cfg.min_score).as_dict()
    return _clean(doc)


def run_pipeline(cfg: RunConfig, errors: bool = False, losses: bool = False):
    """Scenes -> (targets and losses) -> tubelets -> tubes -> metric document."""
    videos = make_videos(cfg)
    results = _fan_out(videos, cfg, losses)
    tubes = {v.video_id: t for v, (t, _) in zip(videos, results)}
    summary = _loss_summary(videos, [s for _, s in results], cfg.K) if losses else None
    return videos, tubes, evaluate(videos, tubes, cfg, errors, summary)


def format_table(metrics: dict) -> str:
    """Aligned text view of a metric document."""
    rows = [("frame-mAP@0.5", metrics["frame_mAP@0.5"])]
    rows += [(f"video-mAP{k}" if k.startswith("@") else f"video-mAP {k}", v)
             for k, v in metrics["video_mAP"].items()]
    if "errors" in metrics:
        rows += [(f"error {k}", v) for k, v in metrics["errors"].items()
                 if not k.startswith("num_")]
    width = max(len(name) for name, _ in rows)
    lines = []
    for name, value in rows:
        shown = "n/a" if value is None else f"{100 * value:6.2f}%"
        lines.append(f"{name:<{width}}  {shown}")
    return "\n".join(lines)
