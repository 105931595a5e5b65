"""Online linking of per-window tubelets into video-level tubes.

Windows are visited with stride 1. At each window start the top candidates
extend existing links (highest-scoring link first); leftovers open new links;
a link that has gone ``K`` frames without being extended is closed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .core import GridSpec, Tube, Tubelet
from .decoder import decode_tubelets
from .evaluator import iou, paired_iou

TOP_K = 10


class SequenceError(ValueError):
    """Frames were presented out of order."""


def select_candidates(tubelets: Sequence[Tubelet], top_k: int = TOP_K) -> List[Tubelet]:
    """Highest-scoring ``top_k`` tubelets; ties by ``(class_id, y, x)`` of the key cell."""
    return sorted(tubelets, key=Tubelet.sort_key)[:top_k]


def _shared(a_start, a_boxes, b: Tubelet):
    lo = max(a_start, b.start_frame)
    hi = min(a_start + len(a_boxes) - 1, b.end_frame)
    if hi < lo:
        return None
    return (a_boxes[lo - a_start:hi - a_start + 1],
            b.boxes[lo - b.start_frame:hi - b.start_frame + 1])


def link_overlap(tail: Tubelet, cand: Tubelet) -> float:
    """Mean per-frame IoU over the frames both tubelets cover; 0 when disjoint in time."""
    pair = _shared(tail.start_frame, tail.boxes, cand)
    if pair is None:
        return 0.0
    return float(paired_iou(*pair).mean())


@dataclass
class Link:
    class_id: int
    members: List[Tubelet] = field(default_factory=list)
    score_sum: float = 0.0

    def add(self, tubelet: Tubelet) -> None:
        self.members.append(tubelet)
        self.score_sum += tubelet.score

    @property
    def score(self) -> float:
        return self.score_sum / len(self.members)

    @property
    def tail(self) -> Tubelet:
        return self.members[-1]

    @property
    def last_frame(self) -> int:
        return self.tail.start_frame

    def averaged(self):
        """``(start_frame, boxes)`` with each frame averaged over covering members."""
        start = self.members[0].start_frame
        stop = max(m.end_frame for m in self.members) + 1
        sums = np.zeros((stop - start, 4))
        counts = np.zeros(stop - start)
        for m in self.members:
            i = m.start_frame - start
            sums[i:i + m.K] += m.boxes
            counts[i:i + m.K] += 1
        if (counts == 0).any():
            raise AssertionError("link has frames with no covering tubelet")
        return start, sums / counts[:, None]

    def to_tube(self) -> Tube:
        start, boxes = self.averaged()
        return Tube(self.class_id, self.score, start, boxes, len(self.members))


class Linker:
    """Link state for one video.

    Args:
        K: tubelet length; a link closes after ``K`` frames without extension.
        tau: overlap a candidate must strictly exceed to extend a link.
        min_score, min_length: tubes below either are dropped at the end.
            ``min_length`` defaults to ``K`` frames.
        top_k: candidates kept per window.
        overlap_mode: ``"tail"`` compares against the link's latest tubelet,
            ``"mean"`` against the link's averaged boxes.
        bridge_gaps: when the candidate shares no frame with the link (only
            possible at a gap of ``K`` frames, e.g. always for ``K = 1``) compare
            the link's last box with the candidate's first box instead of
            scoring 0.
    """

    def __init__(self, K: int, tau: float = 0.5, min_score: float = 0.05,
                 min_length: Optional[int] = None, top_k: int = TOP_K,
                 overlap_mode: str = "tail", bridge_gaps: bool = True):
        if overlap_mode not in ("tail", "mean"):
            raise ValueError(f"unknown overlap_mode {overlap_mode!r}")
        self.K = K
        self.tau = tau
        self.min_score = min_score
        self.min_length = K if min_length is None else min_length
        self.top_k = top_k
        self.overlap_mode = overlap_mode
        self.bridge_gaps = bridge_gaps
        self.active: List[Link] = []
        self.finished: List[Link] = []
        self.frame: Optional[int] = None

    def overlap(self, link: Link, cand: Tubelet) -> float:
        if self.overlap_mode == "mean":
            start, boxes = link.averaged()
            pair = _shared(start, boxes, cand)
            value = None if pair is None else float(paired_iou(*pair).mean())
        else:
            pair = _shared(link.tail.start_frame, link.tail.boxes, cand)
            value = None if pair is None else link_overlap(link.tail, cand)
        if value is None:
            if not self.bridge_gaps:
                return 0.0
            last = link.tail.boxes[-1]
            return iou(last, cand.boxes[0])
        return value

    def step(self, frame: int, tubelets: Sequence[Tubelet]) -> List[Link]:
        """Process the window starting at ``frame``; returns links closed by this step."""
        if self.frame is not None and frame <= self.frame:
            raise SequenceError(f"frame {frame} presented after frame {self.frame}")
        for t in tubelets:
            if t.start_frame != frame:
                raise SequenceError(
                    f"tubelet starting at {t.start_frame} passed for frame {frame}")
        self.frame = frame
        available: List[Optional[Tubelet]] = list(select_candidates(tubelets, self.top_k))

        ranked = sorted(self.active, key=lambda link: -link.score)
        still_active, closed = [], []
        for link in ranked:
            best = None
            for idx, cand in enumerate(available):
                if cand is None or cand.class_id != link.class_id:
                    continue
                if self.overlap(link, cand) > self.tau:
                    # candidates are already in score order
                    best = idx
                    break
            if best is not None:
                link.add(available[best])
                available[best] = None
                still_active.append(link)
            elif frame - link.last_frame >= self.K:
                closed.append(link)
            else:
                still_active.append(link)

        for cand in available:
            if cand is not None:
                link = Link(cand.class_id)
                link.add(cand)
                still_active.append(link)
        self.active = still_active
        self.finished.extend(closed)
        return closed

    def keep(self, tube: Tube) -> bool:
        length = tube.end_frame - tube.start_frame + 1
        return tube.score >= self.min_score and length >= self.min_length

    def close(self) -> List[Link]:
        """End of stream: every active link is finished."""
        closed, self.active = self.active, []
        self.finished.extend(closed)
        return closed

    def finalize(self) -> List[Tube]:
        """Close the stream and build the surviving tubes in closing order."""
        self.close()
        tubes = [link.to_tube() for link in self.finished]
        return [t for t in tubes if self.keep(t)]


def link_tubelets(tubelets_by_frame: Mapping[int, Sequence[Tubelet]], K: int,
                  **linker_kwargs) -> List[Tube]:
    """Offline linking over every window start from the first to the last given."""
    linker = Linker(K, **linker_kwargs)
    if tubelets_by_frame:
        for f in range(min(tubelets_by_frame), max(tubelets_by_frame) + 1):
            linker.step(f, tubelets_by_frame.get(f, ()))
    return linker.finalize()


HeadFn = Callable[[int, List[object]], tuple]


class StreamSession:
    """Online processing of a frame stream.

    ``head(start_frame, payloads)`` receives the ``K`` buffered per-frame payloads
    of the newest complete window and returns ``(heatmap, movement, sizes)``.
    Only the previous ``K - 1`` payloads are retained between pushes.
    """

    def __init__(self, spec: GridSpec, head: HeadFn, *, N: int = 100,
                 mode: str = "full_movement", **linker_kwargs):
        self.spec = spec
        self.head = head
        self.N = N
        self.mode = mode
        self.linker = Linker(spec.K, **linker_kwargs)
        self.buffer: deque = deque(maxlen=max(spec.K - 1, 0))
        self.frames_seen = 0
        self.max_buffered = 0
        self.emitted: List[Tube] = []

    def push(self, payload) -> List[Tube]:
        """Feed one frame; returns tubes closed by this frame that pass the filters."""
        window = list(self.buffer) + [payload]
        self.max_buffered = max(self.max_buffered, len(window))
        closed: List[Link] = []
        if len(window) == self.spec.K:
            start = self.frames_seen - self.spec.K + 1
            heat, movement, sizes = self.head(start, window)
            tubelets = decode_tubelets(heat, movement, sizes, self.spec, self.N,
                                       self.mode, start_frame=start)
            closed = self.linker.step(start, tubelets)
        if self.buffer.maxlen:
            self.buffer.append(payload)
        self.frames_seen += 1
        return self._emit(closed)

    def close(self) -> List[Tube]:
        return self._emit(self.linker.close())

    def _emit(self, links: List[Link]) -> List[Tube]:
        tubes = [t for t in (link.to_tube() for link in links) if self.linker.keep(t)]
        self.emitted.extend(tubes)
        return tubes
