"""Branch losses and their analytic gradients w.r.t. the predicted maps.

Each loss returns ``(value, grad)`` where ``grad`` has the shape of the
prediction it differentiates. The L1 subgradient at zero is taken as 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import check_map

CLAMP_EPS = 1e-4


@dataclass(frozen=True)
class LossReport:
    l_center: float
    l_movement: float
    l_box: float
    l_total: float
    n: int


def center_focal_loss(pred, gt, alpha: float = 2.0, beta: float = 4.0,
                      n: Optional[int] = None, eps: float = CLAMP_EPS):
    """Penalty-reduced focal loss on the center heatmap.

    Cells where ``gt == 1`` are positives; every other cell is a negative whose
    weight decays as ``(1 - gt) ** beta``. Predictions are clamped to
    ``[eps, 1 - eps]`` before the logs and the gradient is zero where the clamp
    is active. ``n`` defaults to the number of positive cells; ``n == 0`` is only
    allowed when there are no positives, and then the divisor is 1.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    pos = gt == 1.0
    num_pos = int(pos.sum())
    if n is None:
        n = num_pos
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0 and num_pos:
        raise ValueError("n = 0 but the ground truth has positive cells")
    denom = float(n) if n else 1.0

    p = np.clip(pred, eps, 1 - eps)
    inside = (pred > eps) & (pred < 1 - eps)
    log_p = np.log(p)
    log_q = np.log1p(-p)
    neg_w = (1 - gt) ** beta

    pos_term = (1 - p) ** alpha * log_p
    neg_term = neg_w * p ** alpha * log_q
    terms = np.where(pos, pos_term, neg_term)
    loss = -terms.sum() / denom

    d_pos = -alpha * (1 - p) ** (alpha - 1) * log_p + (1 - p) ** alpha / p
    d_neg = neg_w * (alpha * p ** (alpha - 1) * log_q - p ** alpha / (1 - p))
    grad = -np.where(pos, d_pos, d_neg) / denom
    grad = np.where(inside, grad, 0.0)
    return float(loss), grad


def movement_loss(pred_M, targets: Sequence[Tuple[Tuple[int, int], np.ndarray]]):
    """Mean over instances of the L1 distance between ``pred_M`` at the key cell and ``m``."""
    pred_M = np.asarray(pred_M, dtype=np.float64)
    check_map(pred_M, name="movement map")
    grad = np.zeros_like(pred_M)
    n = len(targets)
    if n == 0:
        return 0.0, grad
    total = 0.0
    for (x, y), m in targets:
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (pred_M.shape[2],):
            raise ValueError(f"movement target has {m.size} entries, map has "
                             f"{pred_M.shape[2]} channels")
        _check_cell(x, y, pred_M.shape)
        diff = pred_M[y, x] - m
        total += np.abs(diff).sum()
        grad[y, x] += np.sign(diff) / n
    return float(total / n), grad


def box_loss(pred_S, targets: Sequence[Tuple[np.ndarray, np.ndarray]],
             normalize: str = "n"):
    """L1 size loss at each instance's per-frame center cell.

    ``pred_S`` is ``(K, Hg, Wg, 2)``; each target is ``(points, sizes)`` with
    ``points[j] = (x, y)``. The sum over instances and frames is divided by
    ``n`` (``normalize="n"``) or by ``n * K`` (``normalize="nk"``).
    """
    pred_S = np.asarray(pred_S, dtype=np.float64)
    if pred_S.ndim != 4 or pred_S.shape[3] != 2:
        raise ValueError(f"size maps must be (K, Hg, Wg, 2), got {pred_S.shape}")
    if normalize not in ("n", "nk"):
        raise ValueError(f"unknown normalization {normalize!r}")
    grad = np.zeros_like(pred_S)
    n = len(targets)
    if n == 0:
        return 0.0, grad
    K = pred_S.shape[0]
    denom = n * K if normalize == "nk" else n
    total = 0.0
    for points, sizes in targets:
        points = np.asarray(points)
        sizes = np.asarray(sizes, dtype=np.float64)
        if points.shape != (K, 2) or sizes.shape != (K, 2):
            raise ValueError("size targets must provide one point and size per frame")
        for j in range(K):
            x, y = int(points[j, 0]), int(points[j, 1])
            _check_cell(x, y, pred_S.shape[1:])
            diff = pred_S[j, y, x] - sizes[j]
            total += np.abs(diff).sum()
            grad[j, y, x] += np.sign(diff) / denom
    return float(total / denom), grad


def _check_cell(x: int, y: int, shape) -> None:
    if not (0 <= x < shape[1] and 0 <= y < shape[0]):
        raise ValueError(f"cell ({x}, {y}) outside {shape[1]}x{shape[0]} grid")


def total_loss(l_center: float, l_movement: float, l_box: float,
               a: float = 1.0, b: float = 0.1, n: int = 0) -> LossReport:
    total = l_center + a * l_movement + b * l_box
    return LossReport(float(l_center), float(l_movement), float(l_box), float(total), n)


def clip_loss(pred_heat, pred_M, pred_S, targets, *, alpha: float = 2.0,
              beta: float = 4.0, a: float = 1.0, b: float = 0.1,
              box_normalize: str = "n"):
    """All three losses for one window.

    ``targets`` is an :class:`~tubekit.encoder.ClipTargets`. Returns the report
    and a dict of gradients keyed ``heatmap``, ``movement``, ``size``.
    """
    lc, gc = center_focal_loss(pred_heat, targets.center_heatmap, alpha, beta, n=targets.n)
    lm, gm = movement_loss(pred_M, targets.movement_targets)
    lb, gb = box_loss(pred_S, targets.size_targets, normalize=box_normalize)
    report = total_loss(lc, lm, lb, a, b, n=targets.n)
    return report, {"heatmap": gc, "movement": a * gm, "size": b * gb}
