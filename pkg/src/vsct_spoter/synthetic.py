"""Synthetic signing-like pose data with class-dependent geometry.

Each class owns a wrist trajectory for both arms and a hand shape (finger
spread and curl). Every sample gets a random global placement and scale
(removed by normalization), a random start phase jitter and Gaussian point
noise. Classes listed in ``hard_classes`` receive ``hard_noise`` instead of
``noise``.
"""
from __future__ import annotations

import math

import numpy as np

from .pose_data import BODY, BODY_INDEX, FACE, LEFT_HAND, NUM_POINTS, RIGHT_HAND, Dataset, GlossVocabulary, PoseSequence

_BASE_BODY = np.array(
    [
        [320.0, 100.0],  # nose
        [320.0, 160.0],  # neck
        [260.0, 165.0],  # right shoulder
        [240.0, 240.0],  # right elbow
        [250.0, 300.0],  # right wrist
        [380.0, 165.0],  # left shoulder
        [400.0, 240.0],  # left elbow
        [390.0, 300.0],  # left wrist
        [320.0, 330.0],  # mid hip
    ]
)


def _face() -> np.ndarray:
    t = np.linspace(0.0, 2 * math.pi, 70, endpoint=False)
    return np.stack([320.0 + 32.0 * np.cos(t), 92.0 + 42.0 * np.sin(t)], axis=1)


def _hand(wrist: np.ndarray, direction: float, spread: np.ndarray, curl: np.ndarray, size: float = 9.0) -> np.ndarray:
    """21 hand points: the wrist, then 4 joints for each of 5 fingers."""
    pts = [wrist]
    for f in range(5):
        ang = direction + (f - 2) * spread[f]
        p = wrist.copy()
        for j in range(4):
            ang += curl[f] * (j > 0)
            p = p + size * np.array([math.cos(ang), math.sin(ang)])
            pts.append(p)
    return np.array(pts)


def class_signature(k: int, num_classes: int) -> dict:
    rng = np.random.default_rng(10_000 + k)
    return {
        "right_angle": 2 * math.pi * k / num_classes,
        "left_angle": 2 * math.pi * ((3 * k + 1) % num_classes) / num_classes + 0.3,
        "amplitude": 40.0 + 30.0 * rng.random(),
        "spread": 0.15 + 0.35 * rng.random(5),
        "curl": rng.uniform(-0.5, 0.5, 5),
        "hand_dir": rng.uniform(-math.pi, math.pi),
    }


def make_sequence(
    k: int,
    num_classes: int,
    rng: np.random.Generator,
    frames: int = 12,
    noise: float = 1.5,
    signer: int = 0,
) -> PoseSequence:
    sig = class_signature(k, num_classes)
    pts = np.zeros((frames, NUM_POINTS, 2))
    phase = rng.uniform(-0.1, 0.1)
    for t in range(frames):
        s = min(max(t / max(frames - 1, 1) + phase, 0.0), 1.0)
        body = _BASE_BODY.copy()
        for side, key in (("right", "right_angle"), ("left", "left_angle")):
            offset = sig["amplitude"] * s * np.array([math.cos(sig[key]), math.sin(sig[key])])
            body[BODY_INDEX[f"{side}_wrist"]] += offset
            body[BODY_INDEX[f"{side}_elbow"]] += 0.5 * offset
        pts[t, BODY] = body
        pts[t, FACE] = _face()
        pts[t, RIGHT_HAND] = _hand(body[BODY_INDEX["right_wrist"]], sig["hand_dir"] + s, sig["spread"], sig["curl"])
        pts[t, LEFT_HAND] = _hand(body[BODY_INDEX["left_wrist"]], -sig["hand_dir"] - s, sig["spread"][::-1], -sig["curl"])
    pts += rng.normal(0.0, noise, pts.shape)
    scale = rng.uniform(0.6, 1.6)
    shift = rng.uniform(-200.0, 200.0, 2)
    pts = pts * scale + shift
    present = np.ones((frames, NUM_POINTS), dtype=bool)
    return PoseSequence(pts, present, gloss_id=k, signer_id=signer)


def make_synthetic_dataset(
    num_classes: int,
    per_class: int,
    seed: int = 0,
    frames: int = 12,
    noise: float = 1.5,
    hard_classes: tuple[int, ...] = (),
    hard_noise: float = 12.0,
    num_signers: int = 5,
) -> Dataset:
    rng = np.random.default_rng(seed)
    vocab = GlossVocabulary(tuple(f"class_{k:03d}" for k in range(num_classes)))
    seqs = []
    for k in range(num_classes):
        for r in range(per_class):
            sigma = hard_noise if k in hard_classes else noise
            seqs.append(make_sequence(k, num_classes, rng, frames, sigma, signer=(k + r) % num_signers))
    return Dataset(vocab, tuple(seqs))
