"""Turn predicted center, movement and size maps into scored tubelets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .core import GridSpec, Tubelet, check_map, nearest_cell

MODES = ("no_movement", "semi_movement", "full_movement")

_NEIGHBOURS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


@dataclass(frozen=True)
class Peak:
    x: int
    y: int
    class_id: int
    score: float


def peak_mask(heatmap: np.ndarray) -> np.ndarray:
    """Cells that are >= every existing 8-connected neighbour in their own channel."""
    H, W = heatmap.shape[:2]
    padded = np.pad(heatmap, ((1, 1), (1, 1), (0, 0)), constant_values=-np.inf)
    mask = np.ones(heatmap.shape, dtype=bool)
    for dy, dx in _NEIGHBOURS:
        mask &= heatmap >= padded[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]
    return mask


def extract_peaks(heatmap, N: int = 100) -> List[Peak]:
    """Top-``N`` local peaks over all classes.

    Ties in score are broken by ascending ``(class_id, y, x)``.
    """
    heatmap = check_map(heatmap, name="heatmap")
    ys, xs, cs = np.nonzero(peak_mask(heatmap))
    scores = heatmap[ys, xs, cs]
    order = np.lexsort((xs, ys, cs, -scores))[:N]
    return [Peak(int(xs[i]), int(ys[i]), int(cs[i]), float(scores[i])) for i in order]


def read_trajectory(movement, peak: Peak) -> np.ndarray:
    """Grid-space trajectory ``(K, 2)``: the peak moved by its movement vector."""
    movement = np.asarray(movement)
    if movement.ndim != 3 or movement.shape[2] % 2:
        raise ValueError(f"movement map must be (Hg, Wg, 2K), got {movement.shape}")
    offsets = movement[peak.y, peak.x].astype(np.float64).reshape(-1, 2)
    return np.array([peak.x, peak.y], dtype=np.float64) + offsets


def assemble_boxes(sizes, trajectory: np.ndarray, peak: Peak, spec: GridSpec,
                   mode: str = "full_movement") -> np.ndarray:
    """Pixel boxes ``(K, 4)`` for one trajectory.

    ``full_movement`` reads each frame's size at its own trajectory point,
    ``semi_movement`` reads every size at the key-frame peak but centres boxes on
    the trajectory, ``no_movement`` reads and centres everything at the peak.
    Negative predicted sizes are treated as zero.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    sizes = np.asarray(sizes)
    K = len(trajectory)
    boxes = np.empty((K, 4), dtype=np.float64)
    for j in range(K):
        if mode == "full_movement":
            cx, cy = nearest_cell(trajectory[j, 0], trajectory[j, 1], spec.Wg, spec.Hg)
        else:
            cx, cy = peak.x, peak.y
        w, h = np.maximum(sizes[j, cy, cx].astype(np.float64), 0.0)
        if mode == "no_movement":
            tx, ty = float(peak.x), float(peak.y)
        else:
            tx, ty = trajectory[j]
        boxes[j] = (tx - w / 2, ty - h / 2, tx + w / 2, ty + h / 2)
    return boxes * spec.R


def decode_tubelets(heatmap, movement, sizes, spec: GridSpec, N: int = 100,
                    mode: str = "full_movement", start_frame: int = 0) -> List[Tubelet]:
    """One tubelet per retained peak, in peak order (score descending)."""
    heatmap = check_map(heatmap, spec.C, name="heatmap")
    movement = check_map(movement, 2 * spec.K, name="movement map")
    sizes = np.asarray(sizes)
    expected = (spec.Hg, spec.Wg)
    if heatmap.shape[:2] != expected or movement.shape[:2] != expected:
        raise ValueError(f"maps must be {spec.Hg}x{spec.Wg} grids")
    if sizes.shape != (spec.K, spec.Hg, spec.Wg, 2):
        raise ValueError(f"size maps must be {(spec.K, spec.Hg, spec.Wg, 2)}, got {sizes.shape}")
    tubelets = []
    for peak in extract_peaks(heatmap, N):
        traj = read_trajectory(movement, peak)
        boxes = assemble_boxes(sizes, traj, peak, spec, mode)
        tubelets.append(Tubelet(start_frame, peak.class_id, peak.score, boxes,
                                (peak.x, peak.y)))
    return tubelets
