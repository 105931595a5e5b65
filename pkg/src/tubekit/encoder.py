"""Ground-truth targets for one clip window.

A window starting at video frame ``s`` spans frames ``s .. s+K-1``; the key
frame is ``s + spec.key_index``. Only instances annotated on every frame of
the window are encoded.

All targets live on the feature grid: movements and sizes are divided by
``R`` here and multiplied back exactly once when boxes are assembled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .core import GridSpec, Instance, nearest_cell

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 2.0 / 3.0


class NotCoveringError(ValueError):
    """The instance is not annotated on every frame of the window."""


def _check_covers(instance: Instance, start: int, spec: GridSpec) -> None:
    if not instance.covers(start, start + spec.K):
        raise NotCoveringError(
            f"instance [{instance.start_frame}, {instance.end_frame}] does not "
            f"cover window [{start}, {start + spec.K - 1}]")


def _window_boxes(instance: Instance, start: int, spec: GridSpec) -> np.ndarray:
    _check_covers(instance, start, spec)
    i = start - instance.start_frame
    return instance.boxes[i:i + spec.K]


def key_center(instance: Instance, start: int, spec: GridSpec) -> Tuple[int, int]:
    """Integer grid cell ``(x, y)`` of the key-frame box center.

    The pixel center is floored first, then divided by ``R`` and floored again.
    Cells outside the grid are clamped with a warning.
    """
    x1, y1, x2, y2 = _window_boxes(instance, start, spec)[spec.key_index]
    px = math.floor((x1 + x2) / 2)
    py = math.floor((y1 + y2) / 2)
    gx, gy = px // spec.R, py // spec.R
    cx = min(max(gx, 0), spec.Wg - 1)
    cy = min(max(gy, 0), spec.Hg - 1)
    if (cx, cy) != (gx, gy):
        logger.warning("key center (%d, %d) outside %dx%d grid; clamped to (%d, %d)",
                       gx, gy, spec.Wg, spec.Hg, cx, cy)
    return int(cx), int(cy)


def gaussian_radius(width: float, height: float, min_overlap: float = 0.7) -> float:
    """Largest corner displacement keeping IoU >= ``min_overlap`` (corner-keypoint rule).

    Minimum over the three quadratic cases: both corners shifted inward-outward,
    both shrinking, both growing.
    """
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1 ** 2 - 4 * c1)) / 2

    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2 ** 2 - 16 * c2)) / 2

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def gaussian_sigma(width: float, height: float, min_overlap: float = 0.7) -> float:
    """Instance-adaptive Gaussian sigma for a box of ``width x height`` grid cells."""
    if width < 0 or height < 0:
        raise ValueError("box size must be non-negative")
    radius = max(0, math.floor(gaussian_radius(width, height, min_overlap)))
    return max(radius / 3.0, SIGMA_FLOOR)


def draw_gaussian(heatmap: np.ndarray, channel: int, center: Tuple[int, int],
                  sigma: float) -> None:
    """Max-merge an unnormalised Gaussian into one channel, in place."""
    Hg, Wg = heatmap.shape[:2]
    xs = np.arange(Wg, dtype=np.float64) - center[0]
    ys = np.arange(Hg, dtype=np.float64) - center[1]
    g = np.exp(-(ys[:, None] ** 2 + xs[None, :] ** 2) / (2 * sigma * sigma))
    np.maximum(heatmap[:, :, channel], g, out=heatmap[:, :, channel])


def covering(instances: Sequence[Instance], start: int, spec: GridSpec) -> List[int]:
    """Indices of instances annotated on the whole window; partial overlaps are logged."""
    keep = []
    stop = start + spec.K
    for i, inst in enumerate(instances):
        if inst.covers(start, stop):
            keep.append(i)
        elif inst.start_frame < stop and inst.end_frame >= start:
            logger.info("instance %d only partially covers window [%d, %d]; skipped",
                        i, start, stop - 1)
    return keep


def encode_center_heatmap(instances: Sequence[Instance], start: int, spec: GridSpec,
                          min_overlap: float = 0.7) -> np.ndarray:
    """Ground-truth center heatmap, shape ``(Hg, Wg, C)``."""
    heat = np.zeros((spec.Hg, spec.Wg, spec.C), dtype=np.float64)
    for i in covering(instances, start, spec):
        inst = instances[i]
        if inst.class_id >= spec.C:
            raise ValueError(f"class_id {inst.class_id} >= C={spec.C}")
        x1, y1, x2, y2 = _window_boxes(inst, start, spec)[spec.key_index]
        sigma = gaussian_sigma((x2 - x1) / spec.R, (y2 - y1) / spec.R, min_overlap)
        draw_gaussian(heat, inst.class_id, key_center(inst, start, spec), sigma)
    return heat


def encode_movement(instance: Instance, start: int, spec: GridSpec) -> np.ndarray:
    """Movement target ``(dx_1, dy_1, ..., dx_K, dy_K)`` in grid units.

    Offsets are measured from the floored key cell, so the key-frame entry holds
    the sub-cell residual of the key center.
    """
    boxes = _window_boxes(instance, start, spec)
    kx, ky = key_center(instance, start, spec)
    m = np.empty(2 * spec.K, dtype=np.float64)
    m[0::2] = (boxes[:, 0] + boxes[:, 2]) / 2 / spec.R - kx
    m[1::2] = (boxes[:, 1] + boxes[:, 3]) / 2 / spec.R - ky
    return m


def encode_boxsize(instance: Instance, start: int, spec: GridSpec
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """Per-frame sizes ``(K, 2)`` in grid units and their grid cells ``(K, 2)``.

    Cells use the same half-up rounding the decoder applies to trajectory
    points, so a perfect size map is read back at exactly these cells.
    """
    boxes = _window_boxes(instance, start, spec)
    sizes = np.stack([boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1]], axis=1) / spec.R
    points = np.array([
        nearest_cell((b[0] + b[2]) / 2 / spec.R, (b[1] + b[3]) / 2 / spec.R, spec.Wg, spec.Hg)
        for b in boxes], dtype=np.int64)
    return sizes, points


@dataclass
class ClipTargets:
    """Everything the three losses need for one window."""

    center_heatmap: np.ndarray
    movement_targets: List[Tuple[Tuple[int, int], np.ndarray]] = field(default_factory=list)
    size_targets: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    instance_ids: List[int] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.instance_ids)

    def sidecar(self) -> dict:
        """JSON-friendly view of the sparse targets."""
        return {
            "instance_ids": list(self.instance_ids),
            "movement_targets": [{"key_center": list(c), "m": m.tolist()}
                                 for c, m in self.movement_targets],
            "size_targets": [{"points": p.tolist(), "sizes": s.tolist()}
                             for p, s in self.size_targets],
        }


def encode_clip(instances: Sequence[Instance], start: int, spec: GridSpec,
                min_overlap: float = 0.7) -> ClipTargets:
    ids = covering(instances, start, spec)
    targets = ClipTargets(encode_center_heatmap(instances, start, spec, min_overlap))
    for i in ids:
        inst = instances[i]
        targets.movement_targets.append(
            (key_center(inst, start, spec), encode_movement(inst, start, spec)))
        sizes, points = encode_boxsize(inst, start, spec)
        targets.size_targets.append((points, sizes))
        targets.instance_ids.append(i)
    return targets
