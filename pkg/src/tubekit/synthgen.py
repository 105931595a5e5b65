"""Seeded synthetic scenes and the dense maps a perfect detector would output."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .core import GridSpec, Instance, Video
from .encoder import covering, encode_boxsize, encode_center_heatmap, encode_movement, key_center

MOTIONS = ("static", "linear", "sinusoidal")
MIN_BOX = 4


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic video.

    Linear motion draws an integer velocity per axis from ``[-speed, speed]``
    (or uses ``velocity`` when given) and an integer per-frame size change from
    ``[-size_change, size_change]``. Sinusoidal motion oscillates the box with
    ``amplitude`` pixels over ``period`` frames. ``duration`` bounds instance
    lengths; ``None`` makes every instance span the whole video.
    """

    seed: int = 0
    num_instances: int = 2
    motion: str = "linear"
    speed: int = 2
    velocity: Optional[Tuple[int, int]] = None
    size_change: int = 0
    amplitude: float = 16.0
    period: float = 24.0
    box_size: Tuple[int, int] = (24, 56)
    num_classes: int = 3
    num_frames: int = 32
    W: int = 160
    H: int = 160
    duration: Optional[Tuple[int, int]] = None
    min_separation: float = 48.0
    max_attempts: int = 2000

    def __post_init__(self):
        if self.motion not in MOTIONS:
            raise ValueError(f"motion must be one of {MOTIONS}, got {self.motion!r}")
        lo, hi = self.box_size
        if lo < 0 or hi < lo:
            raise ValueError(f"bad box_size range {self.box_size}")
        if lo > min(self.W, self.H):
            raise ValueError(f"boxes of at least {lo}px cannot fit a {self.W}x{self.H} frame")
        if self.num_frames < 1 or self.num_instances < 0 or self.num_classes < 1:
            raise ValueError("num_frames, num_classes must be positive, num_instances >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        for key in ("velocity", "box_size", "duration"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def _offsets(spec: SceneSpec, rng, length: int):
    """Per-frame top-left offsets and sizes relative to frame 0 of the instance."""
    t = np.arange(length, dtype=np.float64)
    if spec.motion == "static":
        return np.zeros(length), np.zeros(length), np.zeros(length), np.zeros(length)
    if spec.motion == "linear":
        if spec.velocity is not None:
            vx, vy = spec.velocity
        else:
            vx, vy = rng.integers(-spec.speed, spec.speed + 1, size=2)
        dw, dh = rng.integers(-spec.size_change, spec.size_change + 1, size=2)
        return vx * t, vy * t, dw * t, dh * t
    phase = rng.uniform(0, 2 * math.pi, size=2)
    ox = spec.amplitude * (np.sin(2 * math.pi * t / spec.period + phase[0]) - math.sin(phase[0]))
    oy = spec.amplitude * (np.sin(2 * math.pi * t / spec.period + phase[1]) - math.sin(phase[1]))
    return ox, oy, np.zeros(length), np.zeros(length)


def _place(spec: SceneSpec, rng) -> Optional[Instance]:
    if spec.duration is None:
        length, start = spec.num_frames, 0
    else:
        lo, hi = spec.duration
        length = int(rng.integers(max(lo, 1), min(hi, spec.num_frames) + 1))
        start = int(rng.integers(0, spec.num_frames - length + 1))
    class_id = int(rng.integers(spec.num_classes))
    w0, h0 = (int(v) for v in rng.integers(spec.box_size[0], spec.box_size[1] + 1, size=2))
    ox, oy, dw, dh = _offsets(spec, rng, length)
    w = w0 + dw
    h = h0 + dh
    if w.min() < min(MIN_BOX, w0) or h.min() < min(MIN_BOX, h0):
        return None
    # top-left x0 must keep 0 <= x0 + ox and x0 + ox + w <= W on every frame
    x_lo, x_hi = math.ceil(-ox.min()), math.floor((spec.W - w - ox).min())
    y_lo, y_hi = math.ceil(-oy.min()), math.floor((spec.H - h - oy).min())
    if x_lo > x_hi or y_lo > y_hi:
        return None
    x0 = int(rng.integers(x_lo, x_hi + 1))
    y0 = int(rng.integers(y_lo, y_hi + 1))
    x1 = x0 + ox
    y1 = y0 + oy
    boxes = np.stack([x1, y1, x1 + w, y1 + h], axis=1)
    return Instance(class_id, start, boxes)


def _separated(a: Instance, b: Instance, min_dist: float) -> bool:
    lo = max(a.start_frame, b.start_frame)
    hi = min(a.end_frame, b.end_frame)
    if hi < lo or min_dist <= 0:
        return True
    ba = a.boxes[lo - a.start_frame:hi - a.start_frame + 1]
    bb = b.boxes[lo - b.start_frame:hi - b.start_frame + 1]
    ca = (ba[:, :2] + ba[:, 2:]) / 2
    cb = (bb[:, :2] + bb[:, 2:]) / 2
    return bool(np.hypot(*(ca - cb).T).min() >= min_dist)


def generate_scene(spec: SceneSpec) -> List[Instance]:
    """Deterministic instances for ``spec``; raises if they cannot be placed."""
    rng = np.random.default_rng(spec.seed)
    instances: List[Instance] = []
    attempts = 0
    while len(instances) < spec.num_instances:
        attempts += 1
        if attempts > spec.max_attempts:
            raise ValueError(
                f"could not place {spec.num_instances} instances within bounds and "
                f"{spec.min_separation}px separation after {spec.max_attempts} attempts")
        inst = _place(spec, rng)
        if inst is None:
            continue
        if all(_separated(inst, other, spec.min_separation) for other in instances):
            instances.append(inst)
    return instances


def make_video(spec: SceneSpec, video_id: Optional[str] = None) -> Video:
    vid = video_id if video_id is not None else f"synth_{spec.seed:06d}"
    return Video(vid, spec.num_frames, spec.W, spec.H, generate_scene(spec))


def _fill_footprints(boxes_px, values, R: int, Hg: int, Wg: int) -> np.ndarray:
    """Spread each value over the grid cells its box covers; nearest box center wins."""
    out = np.zeros((Hg, Wg, values.shape[1]))
    dist = np.full((Hg, Wg), np.inf)
    gy, gx = np.mgrid[0:Hg, 0:Wg] + 0.5
    for (x1, y1, x2, y2), value in zip(np.asarray(boxes_px) / R, values):
        inside = (gx >= x1) & (gx <= x2) & (gy >= y1) & (gy <= y2)
        d = np.hypot(gx - (x1 + x2) / 2, gy - (y1 + y2) / 2)
        take = inside & (d < dist)
        dist[take] = d[take]
        out[take] = value
    return out


def render_perfect_maps(instances: Sequence[Instance], start: int, spec: GridSpec,
                        heatmap: str = "gaussian", footprint: str = "sparse"):
    """Maps a perfect detector would output for the window starting at ``start``.

    Returns ``(heatmap, movement, sizes)`` shaped ``(Hg, Wg, C)``,
    ``(Hg, Wg, 2K)`` and ``(K, Hg, Wg, 2)``.

    ``heatmap="gaussian"`` reproduces the ground-truth heatmap; ``"binary"`` puts
    1 at each key cell and 0 elsewhere, which is what minimises the focal loss.
    ``footprint="sparse"`` writes movements and sizes only at the supervised
    cells. ``"box"`` also copies them over every cell under the instance's box
    (key-frame box for movement, per-frame box for size; nearest center wins),
    imitating a smooth regression head. Supervised cells always hold their exact
    targets.
    """
    if heatmap not in ("gaussian", "binary"):
        raise ValueError(f"unknown heatmap mode {heatmap!r}")
    if footprint not in ("sparse", "box"):
        raise ValueError(f"unknown footprint {footprint!r}")
    K, Hg, Wg = spec.K, spec.Hg, spec.Wg
    ids = covering(instances, start, spec)
    movement = np.zeros((Hg, Wg, 2 * K))
    sizes = np.zeros((K, Hg, Wg, 2))

    if heatmap == "gaussian":
        heat = encode_center_heatmap(instances, start, spec)
    else:
        heat = np.zeros((Hg, Wg, spec.C))
        for i in ids:
            x, y = key_center(instances[i], start, spec)
            heat[y, x, instances[i].class_id] = 1.0

    moves = [encode_movement(instances[i], start, spec) for i in ids]
    box_targets = [encode_boxsize(instances[i], start, spec) for i in ids]
    if footprint == "box" and ids:
        windows = [instances[i].boxes[start - instances[i].start_frame:][:K] for i in ids]
        movement = _fill_footprints([w[spec.key_index] for w in windows], np.array(moves),
                                    spec.R, Hg, Wg)
        for j in range(K):
            sizes[j] = _fill_footprints([w[j] for w in windows],
                                        np.array([s[j] for s, _ in box_targets]), spec.R, Hg, Wg)
    for i, m, (s, points) in zip(ids, moves, box_targets):
        x, y = key_center(instances[i], start, spec)
        movement[y, x] = m
        for j in range(K):
            sizes[j, points[j, 1], points[j, 0]] = s[j]
    return heat, movement, sizes


def perturb(maps, noise_sigma: Union[float, Sequence[float]], seed: int):
    """Add Gaussian noise to ``(heatmap, movement, sizes)``; the heatmap is re-clamped to [0, 1].

    ``noise_sigma`` is one value for all maps or a ``(heatmap, movement, sizes)``
    triple.
    """
    heat, movement, sizes = maps
    if np.ndim(noise_sigma) == 0:
        sig = (float(noise_sigma),) * 3
    else:
        sig = tuple(float(s) for s in noise_sigma)
        if len(sig) != 3:
            raise ValueError("noise_sigma must be a scalar or a triple")
    if min(sig) < 0:
        raise ValueError("noise_sigma must be non-negative")
    if max(sig) == 0:
        return np.array(heat, copy=True), np.array(movement, copy=True), np.array(sizes, copy=True)
    rng = np.random.default_rng(seed)
    heat = np.clip(heat + rng.normal(0.0, sig[0], np.shape(heat)), 0.0, 1.0)
    movement = movement + rng.normal(0.0, sig[1], np.shape(movement))
    sizes = sizes + rng.normal(0.0, sig[2], np.shape(sizes))
    return heat, movement, sizes
