"""Independent reference implementations used only by the tests."""

import numba
import numpy as np


@numba.njit(cache=True)
def _brute_peaks(heat):
    H, W, C = heat.shape
    out = np.zeros((H * W * C, 3), dtype=np.int64)
    count = 0
    for c in range(C):
        for y in range(H):
            for x in range(W):
                v = heat[y, x, c]
                ok = True
                for dy in range(-1, 2):
                    for dx in range(-1, 2):
                        if dy == 0 and dx == 0:
                            continue
                        yy = y + dy
                        xx = x + dx
                        if 0 <= yy < H and 0 <= xx < W and heat[yy, xx, c] > v:
                            ok = False
                if ok:
                    out[count, 0] = c
                    out[count, 1] = y
                    out[count, 2] = x
                    count += 1
    return out[:count]


@numba.njit(cache=True)
def _ranked(heat, cells):
    scores = np.empty(len(cells))
    for i in range(len(cells)):
        scores[i] = -heat[cells[i, 1], cells[i, 2], cells[i, 0]]
    # cells come out in (class, y, x) scan order, so a stable sort settles ties
    return np.argsort(scores, kind="mergesort")


def brute_force_peaks(heat, N):
    """Top-N (class, y, x, score) by score desc then (class, y, x) asc, via a plain scan."""
    heat = np.ascontiguousarray(heat, dtype=np.float64)
    cells = _brute_peaks(heat)
    order = _ranked(heat, cells)[:N]
    return [(int(c), int(y), int(x), float(heat[y, x, c])) for c, y, x in cells[order]]


def brute_force_ap(flags_by_rank, num_gt):
    """AP by enumerating every PR point and integrating the precision envelope."""
    points = []
    tp = fp = 0
    for f in flags_by_rank:
        if f:
            tp += 1
        else:
            fp += 1
        points.append((tp / num_gt, tp / (tp + fp)))
    area = 0.0
    prev_recall = 0.0
    for i, (r, _) in enumerate(points):
        if r > prev_recall:
            best = max(p for rr, p in points[i:])
            area += (r - prev_recall) * best
            prev_recall = r
    return area


def brute_force_match(scores, det_boxes, gt_boxes, thr):
    """Greedy match with a plain python IoU; ties in score keep input order."""
    def iou(a, b):
        iw = min(a[2], b[2]) - max(a[0], b[0])
        ih = min(a[3], b[3]) - max(a[1], b[1])
        if iw <= 0 or ih <= 0:
            return 0.0
        inter = iw * ih
        union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
        return inter / union if union > 0 else 0.0

    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    used = [False] * len(gt_boxes)
    flags = []
    for i in order:
        best, best_j = -1.0, -1
        for j, g in enumerate(gt_boxes):
            if used[j]:
                continue
            o = iou(det_boxes[i], g)
            if o > best:
                best, best_j = o, j
        if best_j >= 0 and best > thr:
            used[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags
