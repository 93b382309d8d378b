import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_sequence
from vsct_spoter.pose_data import BODY, BODY_INDEX, FACE, LEFT_HAND, NUM_POINTS, RIGHT_HAND, PoseSequence
from vsct_spoter.preprocess import (
    DRAWS_PER_CALL,
    AugmentationDistribution,
    AugmentationParams,
    DegenerateInputError,
    apply_augmentation,
    arm_chain,
    augment,
    draw_augmentation_params,
    encode,
    flatten,
    normalize_points,
    normalize_sequence,
    subsample_frames,
)


def _seq(points, present):
    return PoseSequence(points, present, 0)


def test_body_box_formula_hand_computed():
    # body spans x in [50, 150], y in [300, 500]: a 100 x 200 box.
    pts = np.zeros((1, NUM_POINTS, 2))
    present = np.zeros((1, NUM_POINTS), bool)
    body = [(50, 300), (150, 500), (100, 400), (75, 350), (125, 450), (50, 500), (150, 300), (60, 310), (140, 490)]
    pts[0, :9] = body
    present[0, :9] = True
    out = normalize_points(_seq(pts, present)).points[0, :9]
    # square side 200 centred on (100, 400): origin (0, 300)
    expected = [(0.25, 0.0), (0.75, 1.0), (0.5, 0.5), (0.375, 0.25), (0.625, 0.75),
                (0.25, 1.0), (0.75, 0.0), (0.3, 0.05), (0.7, 0.95)]
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_straight_line_reimplementation(rng):
    s = random_sequence(rng, frames=3, p_absent=0.2)
    out = normalize_points(s).points
    for part in (np.r_[np.arange(9), np.arange(51, 121)], np.arange(9, 30), np.arange(30, 51)):
        xs, ys = [], []
        for t in range(3):
            for i in part:
                if s.present[t, i]:
                    xs.append(s.points[t, i, 0])
                    ys.append(s.points[t, i, 1])
        side = max(max(xs) - min(xs), max(ys) - min(ys))
        ox = (max(xs) + min(xs)) / 2 - side / 2
        oy = (max(ys) + min(ys)) / 2 - side / 2
        for t in range(3):
            for i in part:
                if s.present[t, i]:
                    assert abs(out[t, i, 0] - (s.points[t, i, 0] - ox) / side) < 1e-12
                    assert abs(out[t, i, 1] - (s.points[t, i, 1] - oy) / side) < 1e-12
                else:
                    assert out[t, i].tolist() == [0.0, 0.0]


def test_face_shares_the_body_box():
    pts = np.zeros((1, NUM_POINTS, 2))
    present = np.zeros((1, NUM_POINTS), bool)
    pts[0, 0] = (100, 100)
    pts[0, 8] = (100, 300)
    pts[0, 51] = (100, 50)  # above the nose
    present[0, [0, 8, 51]] = True
    out = normalize_points(_seq(pts, present)).points[0]
    assert out[51, 1] == 0.0 and out[8, 1] == 1.0
    np.testing.assert_allclose(out[0, 1], 0.2)


def test_degenerate_part_maps_to_half():
    pts = np.zeros((1, NUM_POINTS, 2))
    present = np.zeros((1, NUM_POINTS), bool)
    pts[0, 9] = (5, 5)
    present[0, 9] = True
    pts[0, 0:2] = [(0, 0), (10, 20)]
    present[0, 0:2] = True
    out = normalize_points(_seq(pts, present)).points[0]
    assert out[9].tolist() == [0.5, 0.5]


def test_no_landmarks_is_degenerate():
    with pytest.raises(DegenerateInputError):
        normalize_sequence(_seq(np.zeros((2, NUM_POINTS, 2)), np.zeros((2, NUM_POINTS), bool)))


@given(
    seed=st.integers(0, 2**32 - 1),
    shift=st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)),
    factor=st.floats(0.05, 20.0),
)
def test_translation_and_scale_invariance(seed, shift, factor):
    s = random_sequence(np.random.default_rng(seed), frames=3, p_absent=0.3)
    base = normalize_sequence(s).vectors
    moved = normalize_sequence(s.with_points(s.points * factor + np.array(shift))).vectors
    assert np.max(np.abs(base - moved)) < 1e-9


def test_examples_translation_and_scale(rng):
    s = random_sequence(rng, frames=6)
    base = normalize_sequence(s).vectors
    assert np.max(np.abs(normalize_sequence(s.with_points(s.points + [137.2, -58.9])).vectors - base)) < 1e-9
    assert np.max(np.abs(normalize_sequence(s.with_points(s.points * 3.7)).vectors - base)) < 1e-9


@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_flatten_shape_and_range(seed, frames):
    s = random_sequence(np.random.default_rng(seed), frames=frames, p_absent=0.4)
    v = normalize_sequence(s).vectors
    assert v.shape == (frames, 242)
    assert v.min() >= 0.0 and v.max() <= 1.0
    absent = ~np.repeat(s.present, 2, axis=1)
    assert not v[absent].any()


def test_flatten_layout():
    pts = np.zeros((1, NUM_POINTS, 2))
    present = np.zeros((1, NUM_POINTS), bool)
    pts[0, 0] = (0.25, 0.75)
    present[0, 0] = True
    v = flatten(_seq(pts, present)).vectors
    assert v[0, 0] == 0.25 and v[0, 1] == 0.75 and not v[0, 2:].any()
    assert not flatten(_seq(np.zeros((1, NUM_POINTS, 2)), np.zeros((1, NUM_POINTS), bool))).vectors.any()


def test_flatten_fifty_frames(rng):
    assert normalize_sequence(random_sequence(rng, frames=50)).vectors.shape == (50, 242)


def test_flatten_rejects_unnormalized(rng):
    with pytest.raises(ValueError):
        flatten(random_sequence(rng))
    assert encode(random_sequence(rng), normalize=False).max() > 1.0


def test_subsample_frames(rng):
    s = random_sequence(rng, frames=10)
    assert subsample_frames(s, 20) is s
    short = subsample_frames(s, 4)
    assert short.num_frames == 4
    np.testing.assert_array_equal(short.points, s.points[[0, 2, 5, 7]])


# -- augmentation -------------------------------------------------------------


def test_zero_distribution_is_identity(rng):
    s = random_sequence(rng, frames=4, p_absent=0.2)
    out = augment(s, AugmentationDistribution.zero(), np.random.default_rng(0))
    assert np.array_equal(out.points, s.points) and np.array_equal(out.present, s.present)


@given(st.integers(0, 2**32 - 1))
def test_zero_apply_prob_is_identity(seed):
    rng = np.random.default_rng(seed)
    s = random_sequence(rng, frames=3)
    out = augment(s, AugmentationDistribution(apply_prob=0.0), rng)
    assert np.array_equal(out.points, s.points)


@given(st.integers(0, 2**32 - 1))
def test_augment_deterministic(seed):
    s = random_sequence(np.random.default_rng(seed), frames=3, p_absent=0.2)
    dist = AugmentationDistribution(apply_prob=1.0)
    a = augment(s, dist, np.random.default_rng(seed))
    b = augment(s, dist, np.random.default_rng(seed))
    assert np.array_equal(a.points, b.points)


@pytest.mark.parametrize("dist", [AugmentationDistribution.zero(), AugmentationDistribution(), AugmentationDistribution(apply_prob=1.0)])
def test_fixed_draw_count(rng, dist):
    s = random_sequence(rng)
    g1, g2 = np.random.default_rng(5), np.random.default_rng(5)
    augment(s, dist, g1)
    g2.random(DRAWS_PER_CALL)
    assert g1.random() == g2.random()


def test_labels_and_mask_unchanged(rng):
    s = PoseSequence(random_sequence(rng).points, random_sequence(rng, p_absent=0.3).present, 4, 7, 2, "src")
    out = augment(s, AugmentationDistribution(apply_prob=1.0), rng)
    assert (out.gloss_id, out.signer_id, out.variation_id, out.source_id) == (4, 7, 2, "src")
    assert np.array_equal(out.present, s.present)
    assert not out.points[~s.present].any()


def test_rotation_oracle(rng):
    s = random_sequence(rng, frames=4, p_absent=0.2)
    dist = AugmentationDistribution(rotate_max_deg=13.0, squeeze_max_frac=0.0, perspective_max_frac=0.0,
                                    arm_joint_max_deg=0.0, apply_prob=1.0)
    theta = draw_augmentation_params(dist, np.random.default_rng(9)).rotate_rad
    assert theta != 0.0 and abs(theta) <= math.radians(13.0)
    out = augment(s, dist, np.random.default_rng(9))
    present = [(t, i) for t in range(4) for i in range(NUM_POINTS) if s.present[t, i]]
    cx = sum(s.points[t, i, 0] for t, i in present) / len(present)
    cy = sum(s.points[t, i, 1] for t, i in present) / len(present)
    for t, i in present:
        x, y = s.points[t, i]
        rx = math.cos(theta) * (x - cx) - math.sin(theta) * (y - cy) + cx
        ry = math.sin(theta) * (x - cx) + math.cos(theta) * (y - cy) + cy
        assert abs(rx - out.points[t, i, 0]) < 1e-9 and abs(ry - out.points[t, i, 1]) < 1e-9


@pytest.mark.parametrize("side,joint", [("right", "shoulder"), ("right", "elbow"), ("left", "shoulder"), ("left", "elbow")])
def test_arm_chain_oracle(rng, side, joint):
    s = random_sequence(rng, frames=3, p_absent=0.15)
    members = {
        ("right", "shoulder"): [3, 4] + list(range(30, 51)),
        ("right", "elbow"): [4] + list(range(30, 51)),
        ("left", "shoulder"): [6, 7] + list(range(9, 30)),
        ("left", "elbow"): [7] + list(range(9, 30)),
    }[(side, joint)]
    pivot = {"shoulder": {"right": 2, "left": 5}, "elbow": {"right": 3, "left": 6}}[joint][side]
    assert arm_chain(side, joint)[0] == pivot
    assert sorted(arm_chain(side, joint)[1].tolist()) == members
    theta = math.radians(3.5)
    out = apply_augmentation(s, AugmentationParams(arm_side=side, arm_joint=joint, arm_rad=theta))
    outside = [i for i in range(NUM_POINTS) if i not in members]
    assert np.array_equal(out.points[:, outside], s.points[:, outside])
    for t in range(3):
        for i in members:
            x, y = s.points[t, i]
            if not s.present[t, i] or not s.present[t, pivot]:
                assert out.points[t, i].tolist() == [x, y]
                continue
            px, py = s.points[t, pivot]
            rx = math.cos(theta) * (x - px) - math.sin(theta) * (y - py) + px
            ry = math.sin(theta) * (x - px) + math.cos(theta) * (y - py) + py
            assert abs(rx - out.points[t, i, 0]) < 1e-9 and abs(ry - out.points[t, i, 1]) < 1e-9


def test_arm_only_distribution_touches_only_a_chain(rng):
    s = random_sequence(rng, frames=3, p_absent=0.0)
    dist = AugmentationDistribution(0.0, 0.0, 0.0, 4.0, 1.0)
    params = draw_augmentation_params(dist, np.random.default_rng(3))
    out = augment(s, dist, np.random.default_rng(3))
    _, chain = arm_chain(params.arm_side, params.arm_joint)
    changed = np.flatnonzero((out.points != s.points).any(axis=(0, 2)))
    assert set(changed.tolist()) <= set(chain.tolist()) and len(changed) > 0


def test_squeeze_and_perspective_keep_vertical_coordinates(rng):
    s = random_sequence(rng, frames=2)
    out = apply_augmentation(s, AugmentationParams(squeeze=0.1, perspective=0.08))
    np.testing.assert_array_equal(out.points[..., 1], s.points[..., 1])
    width = lambda p: p[..., 0][s.present].max() - p[..., 0][s.present].min()  # noqa: E731
    assert width(out.points) < width(s.points)


def test_distribution_bounds():
    with pytest.raises(ValueError):
        AugmentationDistribution(squeeze_max_frac=1.0)
    with pytest.raises(ValueError):
        AugmentationDistribution(apply_prob=1.5)
    with pytest.raises(ValueError):
        AugmentationDistribution(rotate_max_deg=-1)


def test_augmented_sequence_normalizes_into_unit_box(rng):
    s = random_sequence(rng, frames=4, p_absent=0.1)
    out = augment(s, AugmentationDistribution(apply_prob=1.0), rng)
    v = normalize_sequence(out).vectors
    assert v.min() >= 0.0 and v.max() <= 1.0
