"""Central finite-difference checks of the analytic loss gradients.

The focal loss is a sum of independent per-cell terms, so the finite difference
for a cell is taken on that cell's own term (same ``n``). Differencing the whole
map would bury gradients of strongly down-weighted negatives under round-off of
the full sum. The L1 losses are piecewise linear; a cell is skipped as a kink
cell when its subgradient differs anywhere in ``[x - h, x + h]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .losses import box_loss, center_focal_loss, movement_loss


@dataclass(frozen=True)
class GradcheckResult:
    name: str
    cells: int
    max_rel_error: float

    def as_dict(self) -> dict:
        return {"loss": self.name, "cells": self.cells, "max_rel_error": self.max_rel_error}


def rel_error(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def _sample(rng, shape, count: int) -> List[Tuple[int, ...]]:
    flat = rng.choice(int(np.prod(shape)), size=min(count, int(np.prod(shape))), replace=False)
    return [tuple(int(v) for v in np.unravel_index(i, shape)) for i in np.sort(flat)]


def check_focal(rng, shape=(16, 16, 4), cells: int = 200, h: float = 1e-6,
                alpha: float = 2.0, beta: float = 4.0) -> GradcheckResult:
    gt = rng.uniform(0, 1, shape) ** 4
    n = max(1, shape[0] * shape[1] * shape[2] // 64)
    for idx in _sample(rng, shape, n):
        gt[idx] = 1.0
    pred = rng.uniform(0.01, 0.99, shape)
    _, grad = center_focal_loss(pred, gt, alpha, beta, n=n)
    worst = 0.0
    for idx in _sample(rng, shape, cells):
        g = gt[idx].reshape(1, 1, 1)

        def term(v):
            return center_focal_loss(np.full((1, 1, 1), v), g, alpha, beta, n=n)[0]

        fd = (term(pred[idx] + h) - term(pred[idx] - h)) / (2 * h)
        worst = max(worst, rel_error(fd, grad[idx]))
    return GradcheckResult("center", cells, float(worst))


def _l1_check(name, loss_fn, pred, supervised, rng, cells, h):
    _, grad = loss_fn(pred)
    chosen = list(supervised[:cells // 2])
    chosen += _sample(rng, pred.shape, cells - len(chosen))
    worst, used = 0.0, 0
    for idx in chosen:
        xp = pred.copy()
        xm = pred.copy()
        xp[idx] += h
        xm[idx] -= h
        lp, gp = loss_fn(xp)
        lm, gm = loss_fn(xm)
        if not gp[idx] == gm[idx] == grad[idx]:  # a kink lies within h of the cell value
            continue
        worst = max(worst, rel_error((lp - lm) / (2 * h), grad[idx]))
        used += 1
    return GradcheckResult(name, used, float(worst))


def check_movement(rng, Hg: int = 12, Wg: int = 12, K: int = 5, n: int = 6,
                   cells: int = 200, h: float = 1e-6, kink: float = 1e-6) -> GradcheckResult:
    pred = rng.normal(size=(Hg, Wg, 2 * K))
    targets = []
    for _ in range(n):
        x, y = int(rng.integers(Wg)), int(rng.integers(Hg))
        m = rng.normal(size=2 * K)
        m = np.where(np.abs(pred[y, x] - m) < kink, m + 10 * kink, m)
        targets.append(((x, y), m))
    supervised = [(y, x, c) for (x, y), _ in targets for c in range(2 * K)]
    return _l1_check("movement", lambda p: movement_loss(p, targets), pred, supervised,
                     rng, cells, h)


def check_box(rng, Hg: int = 12, Wg: int = 12, K: int = 5, n: int = 6, cells: int = 200,
              h: float = 1e-6, normalize: str = "n") -> GradcheckResult:
    pred = rng.normal(size=(K, Hg, Wg, 2))
    targets = []
    for _ in range(n):
        points = np.stack([rng.integers(0, Wg, K), rng.integers(0, Hg, K)], axis=1)
        sizes = rng.uniform(0, 5, (K, 2))
        targets.append((points, sizes))
    supervised = [(j, int(p[j, 1]), int(p[j, 0]), c) for p, _ in targets
                  for j in range(K) for c in range(2)]
    return _l1_check("box", lambda p: box_loss(p, targets, normalize), pred, supervised,
                     rng, cells, h)


def run_gradcheck(seed: int = 0, cells: int = 200) -> Dict[str, GradcheckResult]:
    """Max relative error of each loss's analytic gradient on ``cells`` sampled cells."""
    rng = np.random.default_rng(seed)
    return {r.name: r for r in (check_focal(rng, cells=cells),
                                check_movement(rng, cells=cells),
                                check_box(rng, cells=cells))}
