import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_peaks
from tubekit.core import GridSpec, Instance
from tubekit.decoder import (Peak, assemble_boxes, decode_tubelets, extract_peaks,
                             read_trajectory)
from tubekit.synthgen import render_perfect_maps


def as_rows(peaks):
    return [(p.class_id, p.y, p.x, p.score) for p in peaks]


def test_single_bump_is_top_peak():
    heat = np.zeros((9, 9, 2))
    yy, xx = np.mgrid[0:9, 0:9]
    heat[:, :, 1] = np.exp(-((xx - 3) ** 2 + (yy - 5) ** 2) / 4)
    top = extract_peaks(heat, 5)[0]
    assert (top.x, top.y, top.class_id, top.score) == (3, 5, 1, 1.0)


def test_constant_channel_tie_order():
    heat = np.zeros((3, 3, 2))
    heat[:, :, 1] = 0.4
    peaks = extract_peaks(heat, 4)
    assert [(p.class_id, p.y, p.x) for p in peaks] == [(1, 0, 0), (1, 0, 1), (1, 0, 2), (1, 1, 0)]
    assert len(extract_peaks(heat, 100)) == 18


def test_two_bumps_n1():
    heat = np.zeros((10, 10, 1))
    heat[2, 2, 0] = 0.6
    heat[7, 7, 0] = 0.9
    (p,) = extract_peaks(heat, 1)
    assert (p.x, p.y, p.score) == (7, 7, 0.9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 9), st.integers(1, 3),
       st.sampled_from([None, 2, 4]))
def test_peaks_match_brute_force(seed, H, W, C, levels):
    rng = np.random.default_rng(seed)
    heat = rng.uniform(0, 1, (H, W, C))
    if levels:
        heat = np.floor(heat * levels) / levels
    assert as_rows(extract_peaks(heat, 50)) == brute_force_peaks(heat, 50)


def test_trajectory_hand_example():
    M = np.zeros((20, 20, 6))
    M[11, 12] = (-2, -1, 0, 0, 2, 1)
    traj = read_trajectory(M, Peak(12, 11, 0, 1.0))
    assert np.array_equal(traj, [[10, 10], [12, 11], [14, 12]])
    assert np.array_equal(read_trajectory(np.zeros((20, 20, 6)), Peak(3, 4, 0, 1.0)), [[3, 4]] * 3)
    with pytest.raises(ValueError):
        read_trajectory(np.zeros((20, 20, 5)), Peak(0, 0, 0, 1.0))


def test_assemble_box_hand_example():
    spec = GridSpec(K=1, W=80, H=80, R=4, C=1)
    S = np.zeros((1, 20, 20, 2))
    S[0, 10, 10] = (4, 6)
    boxes = assemble_boxes(S, np.array([[10.0, 10.0]]), Peak(10, 10, 0, 1.0), spec)
    assert np.array_equal(boxes, [[32, 28, 48, 52]])
    S[0, 10, 10] = 0
    assert np.array_equal(assemble_boxes(S, np.array([[10.0, 10.0]]), Peak(10, 10, 0, 1.0), spec),
                          [[40, 40, 40, 40]])


def test_off_grid_trajectory_clamps_read_keeps_center():
    spec = GridSpec(K=1, W=16, H=16, R=4, C=1)
    S = np.zeros((1, 4, 4, 2))
    S[0, 0, 3] = (2, 2)
    boxes = assemble_boxes(S, np.array([[5.0, -1.0]]), Peak(3, 0, 0, 1.0), spec)
    assert np.array_equal(boxes, [[16, -8, 24, 0]])


def test_modes_coincide_without_motion():
    rng = np.random.default_rng(0)
    spec = GridSpec(K=3, W=40, H=40, R=4, C=2)
    heat = rng.uniform(0, 1, (10, 10, 2))
    S = np.broadcast_to(rng.uniform(1, 4, (3, 1, 1, 2)), (3, 10, 10, 2))
    M = np.zeros((10, 10, 6))
    outs = [decode_tubelets(heat, M, S, spec, 20, mode) for mode in
            ("no_movement", "semi_movement", "full_movement")]
    for a, b in zip(outs[0], outs[2]):
        assert np.array_equal(a.boxes, b.boxes)


def test_semi_and_full_share_centers():
    rng = np.random.default_rng(1)
    spec = GridSpec(K=3, W=40, H=40, R=4, C=1)
    heat, M, S = rng.uniform(0, 1, (10, 10, 1)), rng.normal(size=(10, 10, 6)), rng.uniform(0, 3, (3, 10, 10, 2))
    semi = decode_tubelets(heat, M, S, spec, 10, "semi_movement")
    full = decode_tubelets(heat, M, S, spec, 10, "full_movement")
    for a, b in zip(semi, full):
        assert np.allclose(a.boxes[:, :2] + a.boxes[:, 2:], b.boxes[:, :2] + b.boxes[:, 2:])


def test_scores_non_increasing_and_n():
    rng = np.random.default_rng(2)
    spec = GridSpec(K=2, W=64, H=64, R=4, C=3)
    heat = rng.uniform(0, 1, (16, 16, 3))
    tubelets = decode_tubelets(heat, np.zeros((16, 16, 4)), np.zeros((2, 16, 16, 2)), spec, 30)
    scores = [t.score for t in tubelets]
    assert len(scores) == 30 and scores == sorted(scores, reverse=True)
    assert len(decode_tubelets(heat, np.zeros((16, 16, 4)), np.zeros((2, 16, 16, 2)), spec, 1)) == 1


def test_empty_heatmap_still_returns_candidates():
    spec = GridSpec(K=1, W=16, H=16, R=4, C=2)
    tubelets = decode_tubelets(np.zeros((4, 4, 2)), np.zeros((4, 4, 2)), np.zeros((1, 4, 4, 2)),
                               spec, 100)
    assert len(tubelets) == 32 and all(t.score == 0 for t in tubelets)


def test_decode_validates_shapes():
    spec = GridSpec(K=2, W=16, H=16, R=4, C=1)
    with pytest.raises(ValueError):
        decode_tubelets(np.zeros((4, 4, 1)), np.zeros((4, 4, 3)), np.zeros((2, 4, 4, 2)), spec)
    with pytest.raises(ValueError):
        decode_tubelets(np.zeros((4, 4, 1)), np.zeros((4, 4, 4)), np.zeros((1, 4, 4, 2)), spec)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(-3, 3), st.integers(-3, 3))
def test_translation_equivariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    spec = GridSpec(K=3, W=96, H=96, R=4, C=1)
    heat = np.zeros((24, 24, 1))
    M = np.zeros((24, 24, 6))
    S = np.zeros((3, 24, 24, 2))
    for x, y in [(8, 9), (12, 15), (16, 10)]:
        heat[y, x, 0] = rng.uniform(0.5, 1)
        M[y, x] = rng.integers(-2, 3, 6)
        for j in range(3):
            S[j, y + M[y, x, 2 * j + 1].astype(int), x + M[y, x, 2 * j].astype(int)] = rng.uniform(1, 5, 2)

    def shift(a, axis_y, axis_x):
        return np.roll(np.roll(a, dy, axis=axis_y), dx, axis=axis_x)

    base = decode_tubelets(heat, M, S, spec, 3)
    moved = decode_tubelets(shift(heat, 0, 1), shift(M, 0, 1), shift(S, 1, 2), spec, 3)
    for a, b in zip(base, moved):
        assert a.score == b.score
        assert np.allclose(b.boxes, a.boxes + 4 * np.array([dx, dy, dx, dy]))


def test_perfect_maps_round_trip():
    spec = GridSpec(K=5, W=128, H=128, R=4, C=2)
    insts = [Instance(0, 0, [[10 + 3 * t, 12 + 2 * t, 50 + 3 * t, 40 + 2 * t] for t in range(5)]),
             Instance(1, 0, [[80 - 2 * t, 70, 120 - 2 * t, 118] for t in range(5)])]
    heat, M, S = render_perfect_maps(insts, 0, spec)
    tubelets = decode_tubelets(heat, M, S, spec, 100)
    for t, inst in zip(tubelets[:2], sorted(insts, key=lambda i: i.class_id)):
        assert t.score == 1.0
        assert np.abs(t.boxes - inst.boxes).max() <= spec.R
