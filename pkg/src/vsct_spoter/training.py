"""Training loop with the validation-score-conscious extra pass, the
class-balanced sampler, and top-k / per-class evaluation.

Random streams are derived from ``(seed, epoch, ...)`` through
:class:`numpy.random.SeedSequence`, so every draw is a function of the run
seed and its position in the schedule, never of evaluation order.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .model import SpoterModel, topk_matrix
from .pose_data import Dataset
from .preprocess import AugmentationDistribution, augment, encode

log = logging.getLogger(__name__)

TAU_BASES = ("restricted", "full")

# stream tags for SeedSequence derivation
_AUG, _VSCT_AUG, _SHUFFLE, _VSCT_PICK, _BALANCED, _DROPOUT = range(6)

# guards floor/ceil against float products such as 0.7 * 10 = 7.000000000000001
_ROUND_EPS = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 130
    learning_rate: float = 0.001
    momentum: float = 0.0
    weight_decay: float = 0.0
    seed: int = 0
    batch_size: int = 1
    base_augmentation: AugmentationDistribution = field(default_factory=AugmentationDistribution)
    use_augmentation: bool = True
    use_normalization: bool = True
    use_balanced_sampling: bool = False
    use_vsct: bool = False
    epoch_length: int | None = None
    eval_train: bool = True
    eval_threads: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight_decay must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epoch_length is not None and self.epoch_length < 1:
            raise ValueError("epoch_length must be >= 1")


def default_vsct_augmentation() -> AugmentationDistribution:
    return AugmentationDistribution(
        rotate_max_deg=20.0, squeeze_max_frac=0.25, perspective_max_frac=0.15, arm_joint_max_deg=8.0, apply_prob=0.7
    )


@dataclass(frozen=True)
class VsctConfig:
    gamma: float = 0.2
    tau: float = 1.0
    vsct_augmentation: AugmentationDistribution = field(default_factory=default_vsct_augmentation)
    tau_base: str = "restricted"

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")
        if self.tau_base not in TAU_BASES:
            raise ValueError(f"tau_base must be one of {TAU_BASES}")


@dataclass(frozen=True)
class ClassScore:
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


PerClassAccuracy = dict  # class id -> ClassScore; classes without samples are absent


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_top1: float | None = None
    train_top5: float | None = None
    val_top1: float | None = None
    val_top5: float | None = None
    per_class: dict = field(default_factory=dict)
    vsct_selected: list[int] = field(default_factory=list)
    vsct_batch_size: int = 0
    sample_updates: int = 0
    optimizer_steps: int = 0
    seconds: float = 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["per_class"] = {str(k): [v.correct, v.total] for k, v in sorted(self.per_class.items())}
        return d


def _rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *path]))


# -- metrics ----------------------------------------------------------------


def per_class_from_predictions(labels: Sequence[int], predictions: Sequence[int]) -> PerClassAccuracy:
    correct: dict[int, int] = {}
    total: dict[int, int] = {}
    for y, p in zip(labels, predictions):
        y = int(y)
        total[y] = total.get(y, 0) + 1
        correct[y] = correct.get(y, 0) + int(y == int(p))
    return {k: ClassScore(correct[k], total[k]) for k in sorted(total)}


def topk_accuracies(logits: np.ndarray, labels: Sequence[int], ks: Sequence[int]) -> dict[int, float]:
    """Fraction of rows whose label is among the k best logits, for each k."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or len(labels) != logits.shape[0]:
        raise ValueError("need an (N, C) logit matrix and N labels")
    if len(labels) == 0:
        raise ValueError("cannot score an empty set")
    kmax = max(ks)
    top = topk_matrix(logits, kmax)
    hits = top == labels[:, None]
    return {k: float(hits[:, :k].any(axis=1).mean()) for k in ks}


@dataclass
class EvalResult:
    accuracy: dict[int, float]
    per_class: PerClassAccuracy
    logits: np.ndarray


def _encode_all(model: SpoterModel, data: Dataset) -> list[np.ndarray]:
    return [encode(s, model.normalize_inputs) for s in data.sequences]


def evaluate(
    model: SpoterModel,
    data: Dataset,
    ks: Sequence[int] = (1, 5),
    threads: int = 1,
    encoded: list[np.ndarray] | None = None,
) -> EvalResult:
    """Top-k accuracies and per-class top-1 counts on un-augmented inputs."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    for k in ks:
        if not 1 <= k <= model.num_classes:
            raise ValueError(f"k={k} outside [1, {model.num_classes}]")
    xs = encoded if encoded is not None else _encode_all(model, data)
    logits = model.logits_batch(xs, threads)
    labels = data.labels()
    acc = topk_accuracies(logits, labels, ks)
    preds = topk_matrix(logits, 1)[:, 0]
    return EvalResult(acc, per_class_from_predictions(labels, preds), logits)


def per_class_accuracy(model: SpoterModel, data: Dataset, threads: int = 1, encoded=None) -> PerClassAccuracy:
    return evaluate(model, data, (1,), threads, encoded).per_class


# -- VSCT pieces ------------------------------------------------------------


def _score(v) -> float:
    return v.accuracy if isinstance(v, ClassScore) else float(v)


def worst_class_count(gamma: float, num_classes: int) -> int:
    return max(1, math.ceil(gamma * num_classes - _ROUND_EPS))


def select_worst_classes(acc: Mapping[int, ClassScore | float], gamma: float, num_classes: int) -> list[int]:
    """The ceil(gamma * c) lowest-accuracy classes, worst first, ties to the lower id."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    n = min(worst_class_count(gamma, num_classes), len(acc))
    ranked = sorted(acc, key=lambda k: (_score(acc[k]), k))
    return ranked[:n]


def vsct_batch_size(tau: float, subset_size: int, train_size: int | None = None, tau_base: str = "restricted") -> int:
    if subset_size == 0:
        return 0
    base = subset_size if tau_base == "restricted" else train_size
    return min(subset_size, max(1, math.floor(tau * base + _ROUND_EPS)))


def build_vsct_minibatch(
    train: Dataset,
    worst: Sequence[int] | set[int],
    tau: float,
    rng: np.random.Generator,
    tau_base: str = "restricted",
) -> list[int]:
    """Indices into ``train`` of a without-replacement sample from the
    sequences whose class is in ``worst``."""
    if not 0 < tau <= 1:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    wanted = set(worst)
    pool = [i for i, s in enumerate(train.sequences) if s.gloss_id in wanted]
    n = vsct_batch_size(tau, len(pool), len(train), tau_base)
    if n == 0:
        return []
    pick = rng.permutation(len(pool))[:n]
    return [pool[i] for i in pick]


def balanced_sampler(train: Dataset, rng: np.random.Generator, epoch_length: int | None = None) -> Iterator[int]:
    """Yield sample indices: a class uniformly, then one of its samples uniformly."""
    by_class = train.indices_by_class()
    empty = [k for k in range(train.num_classes) if k not in by_class]
    if empty:
        raise ValueError(f"classes without samples cannot be balanced: {empty[:10]}")
    classes = sorted(by_class)
    n = len(train) if epoch_length is None else epoch_length
    for _ in range(n):
        members = by_class[classes[int(rng.integers(len(classes)))]]
        yield members[int(rng.integers(len(members)))]


# -- training loop ----------------------------------------------------------


class Trainer:
    """Owns parameters, optimizer state and counters for one run."""

    def __init__(
        self,
        model: SpoterModel,
        train: Dataset,
        val: Dataset | None,
        cfg: TrainConfig,
        vsct: VsctConfig | None = None,
    ):
        if len(train) == 0:
            raise ValueError("training set is empty")
        if cfg.use_vsct and vsct is None:
            vsct = VsctConfig()
        if model.num_classes != train.num_classes:
            raise ValueError(f"model has {model.num_classes} classes, training data {train.num_classes}")
        if val is not None and len(val) and val.vocabulary != train.vocabulary:
            raise ValueError("validation vocabulary differs from the training vocabulary")
        self.model = model
        self.train_data = train
        self.val_data = val if val is not None and len(val) else None
        self.cfg = cfg
        self.vsct = vsct
        model.normalize_inputs = cfg.use_normalization
        self.optimizer = dc.SGD(model.params.tensors(), cfg.learning_rate, cfg.momentum, cfg.weight_decay)
        self.sample_updates = 0
        self.optimizer_steps = 0
        self._train_x = _encode_all(model, train)
        self._val_x = _encode_all(model, self.val_data) if self.val_data is not None else None
        self._ks = (1, min(5, model.num_classes))
        if cfg.use_vsct and self.val_data is None:
            log.warning("no validation split; VSCT per-class statistics use the training split")

    def _input(self, idx: int, epoch: int, dist: AugmentationDistribution | None, stream: int) -> np.ndarray:
        if dist is None:
            return self._train_x[idx]
        seq = augment(self.train_data[idx], dist, _rng(self.cfg.seed, stream, epoch, idx))
        return encode(seq, self.cfg.use_normalization)

    def _accumulate(self, x: np.ndarray, label: int, dropout_rng) -> float:
        logits = self.model.forward(x, train_mode=True, rng=dropout_rng)
        loss = dc.cross_entropy(logits, label)
        dc.backward(loss)
        self.sample_updates += 1
        return loss.item()

    def _step(self, batch_len: int) -> None:
        self.optimizer.step(1.0 / batch_len)
        self.optimizer.zero_grad()
        self.optimizer_steps += 1

    def _dropout_rng(self, epoch: int, k: int):
        if self.model.config.dropout_rate > 0:
            return _rng(self.cfg.seed, _DROPOUT, epoch, k)
        return None

    def epoch_order(self, epoch: int) -> list[int]:
        cfg = self.cfg
        if cfg.use_balanced_sampling:
            return list(balanced_sampler(self.train_data, _rng(cfg.seed, _BALANCED, epoch), cfg.epoch_length))
        order = _rng(cfg.seed, _SHUFFLE, epoch).permutation(len(self.train_data)).tolist()
        if cfg.epoch_length is not None:
            order = [order[i % len(order)] for i in range(cfg.epoch_length)]
        return order

    def main_pass(self, epoch: int) -> float:
        cfg = self.cfg
        dist = cfg.base_augmentation if cfg.use_augmentation else None
        order = self.epoch_order(epoch)
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            for j, idx in enumerate(batch):
                x = self._input(idx, epoch, dist, _AUG)
                losses.append(self._accumulate(x, self.train_data[idx].gloss_id, self._dropout_rng(epoch, start + j)))
            self._step(len(batch))
        return float(np.mean(losses))

    def stats_split(self) -> tuple[Dataset, list[np.ndarray]]:
        if self.val_data is not None:
            return self.val_data, self._val_x
        return self.train_data, self._train_x

    def vsct_step(self, epoch: int) -> tuple[list[int], list[int], PerClassAccuracy]:
        """Per-class stats, worst-class selection, and one extra update on
        a mini-batch of those classes under the VSCT augmentation."""
        vs = self.vsct
        data, xs = self.stats_split()
        acc = per_class_accuracy(self.model, data, self.cfg.eval_threads, xs)
        worst = select_worst_classes(acc, vs.gamma, self.model.num_classes)
        batch = build_vsct_minibatch(self.train_data, worst, vs.tau, _rng(self.cfg.seed, _VSCT_PICK, epoch), vs.tau_base)
        if batch:
            for j, idx in enumerate(batch):
                x = self._input(idx, epoch, vs.vsct_augmentation, _VSCT_AUG)
                self._accumulate(x, self.train_data[idx].gloss_id, self._dropout_rng(epoch, -1 - j))
            self._step(len(batch))
        return worst, batch, acc

    def run_epoch(self, epoch: int) -> EpochStats:
        t0 = time.perf_counter()
        updates0, steps0 = self.sample_updates, self.optimizer_steps
        loss = self.main_pass(epoch)
        stats = EpochStats(epoch=epoch, loss=loss)
        if self.cfg.use_vsct:
            worst, batch, acc = self.vsct_step(epoch)
            stats.vsct_selected = sorted(worst)
            stats.vsct_batch_size = len(batch)
            stats.per_class = acc
        threads = self.cfg.eval_threads
        if self.cfg.eval_train:
            res = evaluate(self.model, self.train_data, self._ks, threads, self._train_x)
            stats.train_top1, stats.train_top5 = res.accuracy[1], res.accuracy[self._ks[1]]
            train_pc = res.per_class
        if self.val_data is not None:
            res = evaluate(self.model, self.val_data, self._ks, threads, self._val_x)
            stats.val_top1, stats.val_top5 = res.accuracy[1], res.accuracy[self._ks[1]]
            if not self.cfg.use_vsct:
                stats.per_class = res.per_class
        elif not self.cfg.use_vsct and self.cfg.eval_train:
            stats.per_class = train_pc
        stats.sample_updates = self.sample_updates - updates0
        stats.optimizer_steps = self.optimizer_steps - steps0
        stats.seconds = time.perf_counter() - t0
        return stats


def train(
    model: SpoterModel,
    train_data: Dataset,
    val_data: Dataset | None,
    cfg: TrainConfig,
    vsct: VsctConfig | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> tuple[SpoterModel, list[EpochStats]]:
    """Run ``cfg.epochs`` epochs, updating ``model`` in place."""
    trainer = Trainer(model, train_data, val_data, cfg, vsct)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        stats = trainer.run_epoch(epoch)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return model, history


class MetricsLog:
    """Append-only JSON-lines writer; each line is flushed and synced."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def __call__(self, stats: EpochStats) -> None:
        self.write(stats.to_json())

    def write(self, record: dict) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
