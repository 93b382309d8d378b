"""Pose normalization, geometric augmentation and flattening to 242-d frames.

Normalization works per sequence. Body and face share one square bounding
box (taken over every present body/face landmark of every frame); each hand
gets its own square box. Each box is mapped onto [0, 1]^2.

Augmentations act in pixel space, before normalization. Each call to
:func:`augment` consumes exactly ``DRAWS_PER_CALL`` uniforms from the given
generator, whatever the distribution or the outcome of the apply coins:

    rotation     2 draws  (apply coin, angle)
    squeeze      2 draws  (apply coin, factor)
    perspective  2 draws  (apply coin, ratio)
    arm joint    4 draws  (apply coin, side, joint, angle)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .pose_data import BODY, BODY_INDEX, FACE, LEFT_HAND, NUM_POINTS, RIGHT_HAND, VECTOR_DIM, PoseSequence

DRAWS_PER_CALL = 10


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentationDistribution:
    rotate_max_deg: float = 13.0
    squeeze_max_frac: float = 0.15
    perspective_max_frac: float = 0.10
    arm_joint_max_deg: float = 4.0
    apply_prob: float = 0.5

    def __post_init__(self):
        if not (self.rotate_max_deg >= 0 and self.arm_joint_max_deg >= 0):
            raise ValueError("rotation bounds must be >= 0")
        if not (0 <= self.squeeze_max_frac < 1 and 0 <= self.perspective_max_frac < 1):
            raise ValueError("squeeze/perspective fractions must lie in [0, 1)")
        if not 0 <= self.apply_prob <= 1:
            raise ValueError("apply_prob must lie in [0, 1]")

    @classmethod
    def zero(cls) -> "AugmentationDistribution":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class AugmentationParams:
    """Concrete draws for one call. A zero value means the family is skipped."""

    rotate_rad: float = 0.0
    squeeze: float = 0.0
    perspective: float = 0.0
    arm_side: str = "right"
    arm_joint: str = "shoulder"
    arm_rad: float = 0.0


@dataclass(frozen=True)
class NormalizedSequence:
    vectors: np.ndarray  # (T, 242)

    @property
    def T(self) -> int:
        return self.vectors.shape[0]


# -- normalization ----------------------------------------------------------


def _fit_square(points: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Map the masked points of a (T, K, 2) block into [0, 1]^2 by their
    shared square bounding box. Unmasked entries come back as 0.0."""
    out = np.zeros_like(points)
    if not mask.any():
        return out
    sel = points[mask]
    lo, hi = sel.min(axis=0), sel.max(axis=0)
    side = float((hi - lo).max())
    if side == 0.0:
        out[mask] = 0.5
        return out
    origin = (lo + hi) / 2.0 - side / 2.0
    mapped = np.clip((points - origin) / side, 0.0, 1.0)
    out[mask] = mapped[mask]
    return out


def normalize_points(s: PoseSequence) -> PoseSequence:
    """Return ``s`` with coordinates mapped into [0, 1] (see module docs)."""
    if not s.present.any():
        raise DegenerateInputError("no landmark is present in any frame")
    pts, mask = s.points, s.present
    out = np.zeros_like(pts)
    body_face = np.r_[np.arange(NUM_POINTS)[BODY], np.arange(NUM_POINTS)[FACE]]
    out[:, body_face] = _fit_square(pts[:, body_face], mask[:, body_face])
    for hand in (LEFT_HAND, RIGHT_HAND):
        out[:, hand] = _fit_square(pts[:, hand], mask[:, hand])
    return s.with_points(out)


def flatten(s: PoseSequence, check_range: bool = True) -> NormalizedSequence:
    """(T, 121, 2) -> (T, 242), x before y, absent points as 0.0."""
    pts = np.where(s.present[..., None], s.points, 0.0)
    if check_range and (pts.min() < 0.0 or pts.max() > 1.0):
        raise ValueError("flatten expects coordinates normalized to [0, 1]")
    return NormalizedSequence(pts.reshape(s.num_frames, VECTOR_DIM).copy())


def normalize_sequence(s: PoseSequence) -> NormalizedSequence:
    return flatten(normalize_points(s))


def encode(s: PoseSequence, normalize: bool = True) -> np.ndarray:
    """Model input for ``s``; without normalization raw pixel values are flattened."""
    if normalize:
        return normalize_sequence(s).vectors
    return flatten(s, check_range=False).vectors


def subsample_frames(s: PoseSequence, max_frames: int) -> PoseSequence:
    """Uniformly pick ``max_frames`` frames when ``s`` is longer; otherwise return ``s``."""
    T = s.num_frames
    if T <= max_frames:
        return s
    idx = (np.arange(max_frames) * T) // max_frames
    return PoseSequence(s.points[idx], s.present[idx], s.gloss_id, s.signer_id, s.variation_id, s.source_id)


# -- augmentation -----------------------------------------------------------

ARM_CHAINS = {
    ("right", "shoulder"): (BODY_INDEX["right_shoulder"], [BODY_INDEX["right_elbow"], BODY_INDEX["right_wrist"]], RIGHT_HAND),
    ("right", "elbow"): (BODY_INDEX["right_elbow"], [BODY_INDEX["right_wrist"]], RIGHT_HAND),
    ("left", "shoulder"): (BODY_INDEX["left_shoulder"], [BODY_INDEX["left_elbow"], BODY_INDEX["left_wrist"]], LEFT_HAND),
    ("left", "elbow"): (BODY_INDEX["left_elbow"], [BODY_INDEX["left_wrist"]], LEFT_HAND),
}


def arm_chain(side: str, joint: str) -> tuple[int, np.ndarray]:
    """Pivot index and the indices rotated with it (distal arm points plus hand)."""
    pivot, arm, hand = ARM_CHAINS[(side, joint)]
    return pivot, np.r_[np.asarray(arm), np.arange(NUM_POINTS)[hand]]


def draw_augmentation_params(dist: AugmentationDistribution, rng: np.random.Generator) -> AugmentationParams:
    u = rng.random(DRAWS_PER_CALL)
    on = u[[0, 2, 4, 6]] < dist.apply_prob
    return AugmentationParams(
        rotate_rad=math.radians((2 * u[1] - 1) * dist.rotate_max_deg) if on[0] else 0.0,
        squeeze=u[3] * dist.squeeze_max_frac if on[1] else 0.0,
        perspective=u[5] * dist.perspective_max_frac if on[2] else 0.0,
        arm_side="left" if u[7] < 0.5 else "right",
        arm_joint="elbow" if u[8] < 0.5 else "shoulder",
        arm_rad=math.radians((2 * u[9] - 1) * dist.arm_joint_max_deg) if on[3] else 0.0,
    )


def _rotate(p: np.ndarray, center: np.ndarray, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    d = p - center
    return np.stack([c * d[..., 0] - s * d[..., 1], s * d[..., 0] + c * d[..., 1]], axis=-1) + center


def apply_augmentation(s: PoseSequence, params: AugmentationParams) -> PoseSequence:
    """Apply concrete augmentation draws. All-zero params return ``s`` itself."""
    mask = s.present
    if not mask.any() or (
        params.rotate_rad == 0 and params.squeeze == 0 and params.perspective == 0 and params.arm_rad == 0
    ):
        return s
    pts = np.array(s.points)

    if params.rotate_rad != 0:
        center = pts[mask].mean(axis=0)
        pts[mask] = _rotate(pts[mask], center, params.rotate_rad)

    if params.squeeze != 0 or params.perspective != 0:
        sel = pts[mask]
        lo, hi = sel.min(axis=0), sel.max(axis=0)
        cx = (lo[0] + hi[0]) / 2.0
        x, y = pts[..., 0], pts[..., 1]
        if params.squeeze != 0:
            x = np.where(mask, cx + (x - cx) * (1.0 - params.squeeze), x)
        if params.perspective != 0 and hi[1] > lo[1]:
            # 1 at the top edge (smallest y), 0 at the bottom; the top corners
            # move inward by perspective * width / 2 each.
            height = (hi[1] - y) / (hi[1] - lo[1])
            x = np.where(mask, cx + (x - cx) * (1.0 - params.perspective * height), x)
        pts[..., 0] = x

    if params.arm_rad != 0:
        pivot, chain = arm_chain(params.arm_side, params.arm_joint)
        for t in range(pts.shape[0]):
            if not mask[t, pivot]:
                continue
            live = chain[mask[t, chain]]
            pts[t, live] = _rotate(pts[t, live], pts[t, pivot], params.arm_rad)

    return s.with_points(pts)


def augment(s: PoseSequence, dist: AugmentationDistribution, rng: np.random.Generator) -> PoseSequence:
    return apply_augmentation(s, draw_augmentation_params(dist, rng))
