"""Frame-level and video-level mAP plus the five-way detection error breakdown.

Matching is greedy in score-descending order (stable on input order for equal
scores). A detection takes the unmatched ground truth of its class with the
highest overlap, and only when that overlap is strictly above the threshold.
AP is the area under the all-point interpolated precision/recall curve.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .core import Instance, Tube, Video

VIDEO_THRESHOLDS = (0.2, 0.5, 0.75)
COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def iou(a, b) -> float:
    """IoU of two ``(x1, y1, x2, y2)`` boxes; 0 when the union is empty."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def iou_many(box, boxes) -> np.ndarray:
    """IoU of one box against each row of ``boxes``."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(box[2], boxes[:, 2]) - np.maximum(box[0], boxes[:, 0])
    ih = np.minimum(box[3], boxes[:, 3]) - np.maximum(box[1], boxes[:, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = ((box[2] - box[0]) * (box[3] - box[1])
             + (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1]) - inter)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def paired_iou(a, b) -> np.ndarray:
    """Row-wise IoU of two equally long ``(n, 4)`` box arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    iw = np.minimum(a[:, 2], b[:, 2]) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(a[:, 3], b[:, 3]) - np.maximum(a[:, 1], b[:, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = ((a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
             + (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1]) - inter)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def tube_iou(a, b) -> float:
    """Temporal IoU of the frame ranges times the mean per-frame IoU on shared frames.

    Works for anything with ``start_frame``, ``end_frame`` and per-frame ``boxes``
    (tubes and ground-truth instances alike).
    """
    lo = max(a.start_frame, b.start_frame)
    hi = min(a.end_frame, b.end_frame)
    if hi < lo:
        return 0.0
    inter = hi - lo + 1
    union = max(a.end_frame, b.end_frame) - min(a.start_frame, b.start_frame) + 1
    boxes_a = a.boxes[lo - a.start_frame:hi - a.start_frame + 1]
    boxes_b = b.boxes[lo - b.start_frame:hi - b.start_frame + 1]
    return float(inter / union * paired_iou(boxes_a, boxes_b).mean())


def ap_from_flags(tp: Sequence[bool], num_gt: int) -> float:
    """All-point interpolated AP from TP flags listed in rank order; NaN without ground truth."""
    if num_gt == 0:
        return float("nan")
    tp = np.asarray(tp, dtype=bool)
    if tp.size == 0:
        return 0.0
    tp_c = np.cumsum(tp)
    fp_c = np.cumsum(~tp)
    recall = tp_c / num_gt
    precision = tp_c / (tp_c + fp_c)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class MatchResult:
    """Greedy matching outcome; arrays are indexed by rank."""

    order: np.ndarray
    tp: np.ndarray
    matched: np.ndarray
    num_gt: int

    @property
    def ap(self) -> float:
        return ap_from_flags(self.tp, self.num_gt)


def rank_order(scores) -> np.ndarray:
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def _greedy(order, candidates, overlaps, num_gt, threshold) -> MatchResult:
    used = np.zeros(num_gt, dtype=bool)
    tp = np.zeros(len(order), dtype=bool)
    matched = np.full(len(order), -1, dtype=np.int64)
    for r, i in enumerate(order):
        gidx = candidates[i]
        if len(gidx) == 0:
            continue
        ov = np.where(used[gidx], -np.inf, overlaps[i])
        j = int(np.argmax(ov))
        if ov[j] > threshold:
            tp[r] = True
            matched[r] = gidx[j]
            used[gidx[j]] = True
    return MatchResult(np.asarray(order), tp, matched, num_gt)


class _Prepared:
    """Detections ranked once, with their overlaps to eligible ground truths cached."""

    def __init__(self, scores, dets, gts, overlap, key):
        buckets: Dict[object, List[int]] = defaultdict(list)
        for g, gt in enumerate(gts):
            buckets[key(gt)].append(g)
        self.num_gt = len(gts)
        self.order = rank_order(scores)
        self.candidates = []
        self.overlaps = []
        for det in dets:
            gidx = np.asarray(buckets.get(key(det), ()), dtype=np.int64)
            self.candidates.append(gidx)
            if len(gidx):
                self.overlaps.append(np.asarray(overlap(det, [gts[g] for g in gidx]),
                                                dtype=np.float64))
            else:
                self.overlaps.append(np.empty(0))

    def match(self, threshold: float) -> MatchResult:
        return _greedy(self.order, self.candidates, self.overlaps, self.num_gt, threshold)


def match_detections(dets, gts, overlap: Callable, threshold: float,
                     scores=None, key: Callable = lambda item: None) -> MatchResult:
    """Greedy matching of ``dets`` to ``gts``.

    ``overlap(det, gt_list)`` returns one overlap per ground truth in
    ``gt_list``; only ground truths sharing ``key`` with the detection are
    offered. ``scores`` defaults to ``det.score``.
    """
    if scores is None:
        scores = [d.score for d in dets]
    return _Prepared(scores, dets, gts, overlap, key).match(threshold)


def average_precision(dets, gts, overlap: Callable, threshold: float,
                      scores=None, key: Callable = lambda item: None) -> float:
    return match_detections(dets, gts, overlap, threshold, scores, key).ap


class FrameDetection(NamedTuple):
    video_id: str
    frame: int
    class_id: int
    score: float
    box: tuple


class FrameBox(NamedTuple):
    video_id: str
    frame: int
    class_id: int
    box: tuple


def _frame_overlap(det, gts):
    return iou_many(det.box, [g.box for g in gts])


def _frame_key(item):
    return item.video_id, item.frame


def _mean_ap(per_class: Mapping[int, float]) -> float:
    vals = [v for _, v in sorted(per_class.items()) if not np.isnan(v)]
    return float(np.mean(vals)) if vals else float("nan")


def frame_map(dets: Iterable[FrameDetection], gts: Iterable[FrameBox],
              iou_thr: float = 0.5) -> dict:
    """Per-class frame AP pooled over every frame; mAP over classes present in the ground truth."""
    by_class_det: Dict[int, list] = defaultdict(list)
    by_class_gt: Dict[int, list] = defaultdict(list)
    for d in dets:
        by_class_det[int(d.class_id)].append(d)
    for g in gts:
        by_class_gt[int(g.class_id)].append(g)
    per_class = {}
    for c in sorted(by_class_gt):
        per_class[c] = average_precision(by_class_det.get(c, []), by_class_gt[c],
                                         _frame_overlap, iou_thr, key=_frame_key)
    return {"per_class": per_class, "mAP": _mean_ap(per_class)}


def frame_ground_truth(videos: Mapping[str, Video]) -> List[FrameBox]:
    out = []
    for vid in sorted(videos):
        for inst in videos[vid].instances:
            for k, box in enumerate(inst.boxes):
                out.append(FrameBox(vid, inst.start_frame + k, inst.class_id, tuple(box)))
    return out


def tubes_to_frame_detections(tubes_by_video: Mapping[str, Sequence[Tube]]
                              ) -> List[FrameDetection]:
    """Per-frame detections carrying their tube's score."""
    out = []
    for vid in sorted(tubes_by_video):
        for tube in tubes_by_video[vid]:
            for k, box in enumerate(tube.boxes):
                out.append(FrameDetection(vid, tube.start_frame + k, tube.class_id,
                                          tube.score, tuple(box)))
    return out


def _threshold_label(thr: float) -> str:
    return f"@{thr:g}"


def video_map(tubes_by_video: Mapping[str, Sequence[Tube]],
              gts_by_video: Mapping[str, Sequence[Instance]],
              thresholds: Sequence[float] = VIDEO_THRESHOLDS,
              coco_range: bool = True) -> dict:
    """Video AP per class at each tube-IoU threshold.

    With ``coco_range`` the table also carries ``"0.5:0.95"``, the mean of the
    mAPs at 0.50, 0.55, ..., 0.95.
    """
    dets_c: Dict[int, list] = defaultdict(list)
    gts_c: Dict[int, list] = defaultdict(list)
    for vid in sorted(tubes_by_video):
        for tube in tubes_by_video[vid]:
            dets_c[int(tube.class_id)].append((vid, tube))
    for vid in sorted(gts_by_video):
        for inst in gts_by_video[vid]:
            gts_c[int(inst.class_id)].append((vid, inst))

    prepared = {}
    for c in sorted(gts_c):
        dets = dets_c.get(c, [])
        prepared[c] = _Prepared([t.score for _, t in dets], dets, gts_c[c],
                                lambda d, gs: [tube_iou(d[1], g[1]) for g in gs],
                                key=lambda item: item[0])

    def table(thr):
        per_class = {c: p.match(thr).ap for c, p in prepared.items()}
        return {"per_class": per_class, "mAP": _mean_ap(per_class)}

    out = {_threshold_label(t): table(t) for t in thresholds}
    if coco_range:
        sweep = [table(t)["mAP"] for t in COCO_THRESHOLDS]
        out["0.5:0.95"] = {"mAP": float(np.mean(sweep)) if sweep else float("nan")}
    return out


@dataclass(frozen=True)
class ErrorBreakdown:
    correct: float
    e_c: float
    e_l: float
    e_t: float
    e_m: float
    e_o: float
    num_detections: int
    num_gt: int

    def as_dict(self) -> dict:
        return {"correct": self.correct, "E_C": self.e_c, "E_L": self.e_l,
                "E_T": self.e_t, "E_M": self.e_m, "E_O": self.e_o,
                "num_detections": self.num_detections, "num_gt": self.num_gt}


DEFAULT_PRECEDENCE = ("E_T", "correct", "E_C", "E_L", "E_O")


def error_analysis(dets: Iterable[FrameDetection], videos: Mapping[str, Video],
                   iou_thr: float = 0.5, min_score: float = 0.0,
                   precedence: Sequence[str] = DEFAULT_PRECEDENCE,
                   denominator: str = "detections") -> ErrorBreakdown:
    """Assign every detection above ``min_score`` to one outcome.

    Outcomes, tested in ``precedence`` order (first hit wins):

    * ``E_T``: the video contains the detection's class, but no instance of that
      class spans the detection's frame.
    * ``correct``: an unmatched same-class box in the frame has IoU > ``iou_thr``
      (the match consumes that box).
    * ``E_C``: a box of another class in the frame has IoU > ``iou_thr``.
    * ``E_L``: a same-class box exists in the frame but was not matched.
    * ``E_O``: anything else.

    ``E_M`` is the fraction of ground-truth boxes never matched. With
    ``denominator="detections"`` the other five are fractions of detections;
    with ``"combined"`` all six share the denominator ``detections + missed``.
    """
    if sorted(precedence) != sorted(DEFAULT_PRECEDENCE):
        raise ValueError(f"precedence must be a permutation of {DEFAULT_PRECEDENCE}")
    if denominator not in ("detections", "combined"):
        raise ValueError(f"unknown denominator {denominator!r}")

    frame_gt: Dict[tuple, list] = defaultdict(list)
    for g, fb in enumerate(frame_ground_truth(videos)):
        frame_gt[fb.video_id, fb.frame].append((g, fb.class_id, fb.box))
    num_gt = sum(len(v) for v in frame_gt.values())
    used = np.zeros(num_gt, dtype=bool)

    dets = [d for d in dets if d.score >= min_score]
    counts = dict.fromkeys(DEFAULT_PRECEDENCE, 0)
    for i in rank_order([d.score for d in dets]):
        det = dets[i]
        video = videos.get(det.video_id)
        instances = video.instances if video is not None else ()
        in_frame = frame_gt.get((det.video_id, det.frame), [])
        same = [(g, box) for g, c, box in in_frame if c == det.class_id]
        other = [box for g, c, box in in_frame if c != det.class_id]

        def time_error():
            own = [inst for inst in instances if inst.class_id == det.class_id]
            return bool(own) and not any(
                inst.start_frame <= det.frame <= inst.end_frame for inst in own)

        def correct():
            free = [(g, box) for g, box in same if not used[g]]
            if not free:
                return False
            ov = iou_many(det.box, [box for _, box in free])
            j = int(np.argmax(ov))
            if ov[j] > iou_thr:
                used[free[j][0]] = True
                return True
            return False

        def class_error():
            return bool(other) and bool((iou_many(det.box, other) > iou_thr).any())

        tests = {"E_T": time_error, "correct": correct, "E_C": class_error,
                 "E_L": lambda: bool(same), "E_O": lambda: True}
        for name in precedence:
            if tests[name]():
                counts[name] += 1
                break

    missed = int((~used).sum())
    n = len(dets)
    if denominator == "combined":
        det_den = gt_den = n + missed
    else:
        det_den, gt_den = n, num_gt

    def frac(x, den):
        return x / den if den else 0.0

    return ErrorBreakdown(frac(counts["correct"], det_den), frac(counts["E_C"], det_den),
                          frac(counts["E_L"], det_den), frac(counts["E_T"], det_den),
                          frac(missed, gt_den), frac(counts["E_O"], det_den), n, num_gt)
