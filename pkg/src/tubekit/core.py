"""Domain types shared by every stage of the tubelet pipeline.

Boxes are always in input-pixel units (x1, y1, x2, y2). Dense maps are plain
numpy arrays laid out as (Hg, Wg, channels) and indexed ``[y, x, c]``; the
conversion factor between the two coordinate systems is exactly ``R``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Clip and feature-grid geometry.

    Args:
        K: frames per clip.
        W, H: input frame width and height in pixels.
        R: spatial downsample ratio between input pixels and the grid.
        C: number of action classes.
        key_index: 0-based key frame inside the clip. Defaults to ``K // 2``.
    """

    K: int = 7
    W: int = 288
    H: int = 288
    R: int = 4
    C: int = 24
    key_index: Optional[int] = None

    def __post_init__(self):
        for name in ("K", "W", "H", "R", "C"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.W % self.R or self.H % self.R:
            raise ValueError(
                f"W={self.W} and H={self.H} must be divisible by R={self.R}")
        if self.key_index is None:
            object.__setattr__(self, "key_index", self.K // 2)
        if not 0 <= self.key_index < self.K:
            raise ValueError(f"key_index={self.key_index} outside [0, {self.K})")

    @property
    def Wg(self) -> int:
        return self.W // self.R

    @property
    def Hg(self) -> int:
        return self.H // self.R

    def as_dict(self) -> dict:
        return {"K": self.K, "W": self.W, "H": self.H, "R": self.R,
                "C": self.C, "key_index": self.key_index}

    def replace(self, **changes) -> "GridSpec":
        """Copy with changes; the key frame re-centres when only K changes."""
        fields = self.as_dict()
        if "K" in changes and "key_index" not in changes:
            fields["key_index"] = None
        fields.update(changes)
        return GridSpec(**fields)


def grid_of(spec: GridSpec) -> Tuple[int, int]:
    """Return the feature grid size ``(Wg, Hg)``."""
    return spec.W // spec.R, spec.H // spec.R


class BBox(NamedTuple):
    """Axis-aligned box in input pixels."""

    x1: float
    y1: float
    x2: float
    y2: float

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2

    def validate(self) -> "BBox":
        if not all(math.isfinite(v) for v in self):
            raise ValueError(f"non-finite box {tuple(self)}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"inverted box {tuple(self)}")
        return self


def as_boxes(boxes) -> np.ndarray:
    """Coerce a sequence of 4-tuples to a validated ``(n, 4)`` float64 array."""
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 4)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError(f"boxes must have shape (n, 4), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("boxes contain non-finite values")
    if (arr[:, 2] < arr[:, 0]).any() or (arr[:, 3] < arr[:, 1]).any():
        raise ValueError("boxes must satisfy x1 <= x2 and y1 <= y2")
    return arr


@dataclass(frozen=True, eq=False)
class Instance:
    """Ground-truth action instance: one class, one box per frame."""

    class_id: int
    start_frame: int
    boxes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "boxes", as_boxes(self.boxes))
        if len(self.boxes) == 0:
            raise ValueError("an instance needs at least one box")
        if self.class_id < 0:
            raise ValueError(f"negative class_id {self.class_id}")

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.boxes) - 1

    def covers(self, start: int, stop: int) -> bool:
        """True when every frame in ``[start, stop)`` is annotated."""
        return self.start_frame <= start and stop - 1 <= self.end_frame

    def box_at(self, frame: int) -> BBox:
        return BBox(*self.boxes[frame - self.start_frame])

    def to_dict(self) -> dict:
        return {"class_id": int(self.class_id),
                "start_frame": int(self.start_frame),
                "boxes": self.boxes.tolist()}


@dataclass(frozen=True, eq=False)
class Tubelet:
    """K consecutive boxes detected from the clip starting at ``start_frame``.

    ``center`` is the key-frame grid cell ``(x, y)`` the tubelet was decoded
    from; it only feeds deterministic tie-breaking.
    """

    start_frame: int
    class_id: int
    score: float
    boxes: np.ndarray
    center: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "boxes", as_boxes(self.boxes))
        if not math.isfinite(self.score):
            raise ValueError("tubelet score must be finite")

    @property
    def K(self) -> int:
        return len(self.boxes)

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.boxes) - 1

    def sort_key(self):
        cx, cy = self.center if self.center is not None else (0, 0)
        return (-self.score, self.class_id, cy, cx)

    def to_dict(self) -> dict:
        out = {"start_frame": int(self.start_frame),
               "class_id": int(self.class_id),
               "score": float(self.score),
               "boxes": self.boxes.tolist()}
        if self.center is not None:
            out["center"] = [int(self.center[0]), int(self.center[1])]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Tubelet":
        center = d.get("center")
        return cls(int(d["start_frame"]), int(d["class_id"]), float(d["score"]),
                   d["boxes"], tuple(center) if center is not None else None)


@dataclass(frozen=True, eq=False)
class Tube:
    """Video-level detection produced by linking tubelets."""

    class_id: int
    score: float
    start_frame: int
    boxes: np.ndarray
    num_members: int = 1

    def __post_init__(self):
        object.__setattr__(self, "boxes", as_boxes(self.boxes))

    @property
    def end_frame(self) -> int:
        return self.start_frame + len(self.boxes) - 1

    def box_at(self, frame: int) -> BBox:
        return BBox(*self.boxes[frame - self.start_frame])

    def to_dict(self) -> dict:
        return {"class_id": int(self.class_id), "score": float(self.score),
                "start_frame": int(self.start_frame),
                "end_frame": int(self.end_frame),
                "num_members": int(self.num_members),
                "boxes": self.boxes.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Tube":
        tube = cls(int(d["class_id"]), float(d["score"]), int(d["start_frame"]),
                   d["boxes"], int(d.get("num_members", 1)))
        if "end_frame" in d and int(d["end_frame"]) != tube.end_frame:
            raise ValueError("tube end_frame disagrees with its box count")
        return tube


@dataclass(frozen=True, eq=False)
class Video:
    """Annotation document for one video."""

    video_id: str
    num_frames: int
    W: int
    H: int
    instances: Sequence[Instance] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        for inst in self.instances:
            if inst.start_frame < 0 or inst.end_frame >= self.num_frames:
                raise ValueError(
                    f"instance frames [{inst.start_frame}, {inst.end_frame}] "
                    f"outside video of {self.num_frames} frames")


def check_map(arr, channels: Optional[int] = None, *, heatmap: bool = False,
              name: str = "map") -> np.ndarray:
    """Validate a dense ``(Hg, Wg, channels)`` map and return it as an array."""
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be rank 3 (Hg, Wg, ch), got shape {arr.shape}")
    if channels is not None and arr.shape[2] != channels:
        raise ValueError(f"{name} must have {channels} channels, got {arr.shape[2]}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    if heatmap and arr.size and (arr.min() < 0 or arr.max() > 1):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def nearest_cell(x: float, y: float, Wg: int, Hg: int) -> Tuple[int, int]:
    """Round a continuous grid point half-up per axis and clamp into the grid."""
    cx = min(max(math.floor(x + 0.5), 0), Wg - 1)
    cy = min(max(math.floor(y + 0.5), 0), Hg - 1)
    return int(cx), int(cy)
