import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tubekit.core import GridSpec, Tubelet
from tubekit.linker import (Link, Linker, SequenceError, StreamSession, link_overlap,
                            link_tubelets, select_candidates)
from tubekit.pipeline import RunConfig, make_videos, stream_video, detect_video, link_video


def tl(start, box, score=0.9, cls=0, K=2, center=(0, 0)):
    return Tubelet(start, cls, score, [box] * K, center)


def test_select_candidates():
    many = [tl(0, (0, 0, 1, 1), score=s / 20) for s in range(15)]
    top = select_candidates(many)
    assert len(top) == 10 and [t.score for t in top] == sorted((s / 20 for s in range(5, 15)), reverse=True)
    assert len(select_candidates(many[:3])) == 3
    ties = [tl(0, (0, 0, 1, 1), 0.5, cls=c, center=(x, y)) for c, y, x in
            [(1, 0, 0), (0, 2, 1), (0, 1, 5), (0, 1, 2)]]
    assert [(t.class_id, t.center[1], t.center[0]) for t in select_candidates(ties)] == sorted(
        (c, y, x) for c, y, x in [(1, 0, 0), (0, 2, 1), (0, 1, 5), (0, 1, 2)])


def test_link_overlap_examples():
    a = Tubelet(0, 0, 1.0, [(0, 0, 10, 10)] * 3)
    assert link_overlap(a, Tubelet(0, 0, 1.0, [(0, 0, 10, 10)] * 3)) == 1.0
    assert link_overlap(a, Tubelet(1, 0, 1.0, [(20, 20, 30, 30)] * 3)) == 0.0
    assert link_overlap(a, Tubelet(5, 0, 1.0, [(0, 0, 10, 10)] * 3)) == 0.0
    # shared frames 1 and 2: IoU 0.5 (half width) and 0.25
    b = Tubelet(1, 0, 1.0, [(0, 0, 20, 10), (0, 0, 10, 40), (0, 0, 10, 10)])
    assert link_overlap(a, b) == pytest.approx(0.375)


def test_step_extends_and_starts_links():
    linker = Linker(K=2)
    linker.step(0, [tl(0, (0, 0, 10, 10))])
    linker.step(1, [tl(1, (0, 0, 10, 10)), tl(1, (50, 50, 60, 60), 0.5)])
    sizes = sorted(len(l.members) for l in linker.active)
    assert sizes == [1, 2]


def test_higher_link_wins_the_candidate():
    linker = Linker(K=3)
    linker.step(0, [tl(0, (0, 0, 10, 10), 0.9, K=3), tl(0, (1, 0, 11, 10), 0.8, K=3)])
    linker.step(1, [tl(1, (0, 0, 10, 10), 0.7, K=3)])
    assert sorted(len(l.members) for l in linker.active) == [1, 2]
    winner = max(linker.active, key=lambda l: len(l.members))
    assert winner.members[0].score == 0.9


def test_overlap_at_tau_is_not_enough():
    linker = Linker(K=2, tau=0.5)
    linker.step(0, [tl(0, (0, 0, 10, 10))])
    linker.step(1, [tl(1, (0, 0, 5, 10))])  # IoU exactly 0.5
    assert sorted(len(l.members) for l in linker.active) == [1, 1]


def test_class_constraint():
    linker = Linker(K=2)
    linker.step(0, [tl(0, (0, 0, 10, 10), cls=0)])
    linker.step(1, [tl(1, (0, 0, 10, 10), cls=1)])
    assert len(linker.active) == 2


def test_termination_after_k_frames():
    linker = Linker(K=2)
    linker.step(0, [tl(0, (0, 0, 10, 10))])
    assert linker.step(1, []) == []
    closed = linker.step(2, [tl(2, (40, 40, 50, 50))])
    assert len(closed) == 1 and len(linker.active) == 1
    # a matching candidate exactly K frames later is still bridged onto the link
    bridged = Linker(K=2)
    bridged.step(0, [tl(0, (0, 0, 10, 10))])
    bridged.step(1, [])
    assert bridged.step(2, [tl(2, (0, 0, 10, 10))]) == []
    assert [len(l.members) for l in bridged.active] == [2]


def test_out_of_order_frames():
    linker = Linker(K=2)
    linker.step(3, [])
    with pytest.raises(SequenceError):
        linker.step(3, [])
    with pytest.raises(SequenceError):
        linker.step(4, [tl(5, (0, 0, 1, 1))])


def test_finalize_averages_and_filters():
    link = Link(0)
    link.add(Tubelet(0, 0, 0.5, [(0, 0, 10, 10)] * 2))
    link.add(Tubelet(1, 0, 0.7, [(2, 2, 12, 12)] * 2))
    tube = link.to_tube()
    assert np.array_equal(tube.boxes, [[0, 0, 10, 10], [1, 1, 11, 11], [2, 2, 12, 12]])
    assert tube.score == pytest.approx(0.6) and tube.num_members == 2
    single = Link(0)
    single.add(Tubelet(4, 0, 0.3, [(1, 2, 3, 4)] * 2))
    assert np.array_equal(single.to_tube().boxes, [(1, 2, 3, 4)] * 2)

    short = Linker(K=1, min_length=2)
    short.step(0, [Tubelet(0, 0, 0.9, [(0, 0, 1, 1)])])
    assert short.finalize() == []
    low = Linker(K=1, min_score=0.5)
    low.step(0, [Tubelet(0, 0, 0.4, [(0, 0, 1, 1)])])
    assert low.finalize() == []


def test_gap_bridging_for_k1():
    boxes = [(0, 0, 10, 10), (1, 0, 11, 10), (2, 0, 12, 10)]
    frames = {f: [Tubelet(f, 0, 0.9, [b])] for f, b in enumerate(boxes)}
    assert len(link_tubelets(frames, 1)) == 1
    assert len(link_tubelets(frames, 1, bridge_gaps=False, min_length=1)) == 3


def test_mean_overlap_mode():
    frames = {0: [tl(0, (0, 0, 10, 10))], 1: [tl(1, (0, 0, 10, 10))]}
    assert len(link_tubelets(frames, 2, overlap_mode="mean")) == 1
    with pytest.raises(ValueError):
        Linker(2, overlap_mode="bogus")


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_streams_invariants(seed):
    rng = np.random.default_rng(seed)
    K = int(rng.integers(1, 5))
    frames = {}
    for f in range(12):
        frames[f] = []
        for _ in range(int(rng.integers(0, 14))):
            x, y = rng.integers(0, 30, 2)
            frames[f].append(Tubelet(f, int(rng.integers(2)), float(rng.choice([0.2, 0.5, 0.9])),
                                     [(x, y, x + 10, y + 10)] * K, (int(x), int(y))))
    linker = Linker(K, min_score=0, min_length=1)
    for f in sorted(frames):
        linker.step(f, frames[f])
    linker.close()
    seen = set()
    for link in linker.finished:
        for m in link.members:
            assert id(m) not in seen
            seen.add(id(m))
        starts = [m.start_frame for m in link.members]
        assert all(0 < b - a <= K for a, b in zip(starts, starts[1:]))
        assert link.to_tube().score == link.score_sum / len(link.members)
    assert [t.to_dict() for t in link_tubelets(frames, K)] == [
        t.to_dict() for t in link_tubelets(frames, K)]


def test_stream_equals_offline_and_buffer_bound():
    cfg = RunConfig(K=5, W=96, H=96, C=3, num_videos=2, seed=4,
                    scene={"num_frames": 16, "box_size": (16, 40), "min_separation": 32})
    for i, video in enumerate(make_videos(cfg)):
        offline = link_video(detect_video(video, i, cfg), cfg)
        online = stream_video(video, i, cfg)
        assert [t.to_dict() for t in online] == [t.to_dict() for t in offline]
        assert len(offline) >= 1


def test_short_stream_emits_nothing():
    spec = GridSpec(K=4, W=16, H=16, R=4, C=1)
    calls = []

    def head(start, frames):
        calls.append(start)
        return np.zeros((4, 4, 1)), np.zeros((4, 4, 8)), np.zeros((4, 4, 4, 2))

    session = StreamSession(spec, head)
    for f in range(3):
        assert session.push(f) == []
    assert session.close() == [] and calls == []
    assert session.max_buffered <= spec.K
    session.push(3)
    assert calls == [0] and len(session.buffer) == spec.K - 1
