"""Landmark layout, pose sequence containers, dataset I/O and class mappings.

Dataset files are UTF-8 JSON-lines, one sequence per line::

    {"gloss": "book", "signer": 3, "variation": 0, "source": "x.mp4",
     "frames": [[[x, y, present], ... 121 points ...], ...]}

Legacy frames carrying bare ``[x, y]`` pairs are accepted; a point is then
treated as absent exactly when both coordinates are 0.0.
"""
from __future__ import annotations

import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np


class PoseDataError(ValueError):
    """Base class for dataset and mapping errors."""


class DatasetFormatError(PoseDataError):
    """A dataset line could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class LayoutError(DatasetFormatError):
    """A frame does not match the expected landmark layout."""


class VocabularyError(PoseDataError):
    """Unknown gloss, vocabulary mismatch or invalid class mapping."""


@dataclass(frozen=True)
class LandmarkLayout:
    """Ordered landmark segments. The order is also the flattening order."""

    segments: tuple[tuple[str, int], ...] = (
        ("body", 9),
        ("left_hand", 21),
        ("right_hand", 21),
        ("face", 70),
    )

    @property
    def num_points(self) -> int:
        return sum(n for _, n in self.segments)

    @property
    def vector_dim(self) -> int:
        return 2 * self.num_points

    def segment_slice(self, name: str) -> slice:
        start = 0
        for seg, n in self.segments:
            if seg == name:
                return slice(start, start + n)
            start += n
        raise KeyError(name)


LAYOUT = LandmarkLayout()
NUM_POINTS = LAYOUT.num_points
VECTOR_DIM = LAYOUT.vector_dim

BODY = LAYOUT.segment_slice("body")
LEFT_HAND = LAYOUT.segment_slice("left_hand")
RIGHT_HAND = LAYOUT.segment_slice("right_hand")
FACE = LAYOUT.segment_slice("face")

# Upper-body point labels (indices into the body segment). A convention: the
# source pose files do not name them.
BODY_LABELS = (
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "mid_hip",
)
BODY_INDEX = {name: i for i, name in enumerate(BODY_LABELS)}

assert NUM_POINTS == 121 and VECTOR_DIM == 242


@dataclass(frozen=True)
class PoseFrame:
    points: np.ndarray  # (121, 2)
    present: np.ndarray  # (121,) bool


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PoseSequence:
    """A labeled sequence of frames.

    ``points`` has shape (T, 121, 2) in source pixel coordinates and
    ``present`` shape (T, 121). Absent points are stored as (0.0, 0.0).
    Both arrays are read-only copies.
    """

    points: np.ndarray
    present: np.ndarray
    gloss_id: int
    signer_id: int = 0
    variation_id: int = 0
    source_id: str = ""

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        present = np.asarray(self.present, dtype=bool)
        if points.ndim != 3 or points.shape[1:] != (NUM_POINTS, 2):
            raise LayoutError(f"expected points of shape (T, {NUM_POINTS}, 2), got {points.shape}")
        if present.shape != points.shape[:2]:
            raise LayoutError(f"present mask shape {present.shape} does not match points {points.shape}")
        if points.shape[0] < 1:
            raise LayoutError("a sequence needs at least one frame")
        points = np.where(present[..., None], points, 0.0)
        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "present", _frozen(present))

    @property
    def num_frames(self) -> int:
        return self.points.shape[0]

    @property
    def frames(self) -> list[PoseFrame]:
        return [PoseFrame(p, m) for p, m in zip(self.points, self.present)]

    def with_points(self, points: np.ndarray) -> "PoseSequence":
        """Same labels and mask, new geometry."""
        return PoseSequence(points, self.present, self.gloss_id, self.signer_id, self.variation_id, self.source_id)

    def with_label(self, gloss_id: int) -> "PoseSequence":
        return PoseSequence(self.points, self.present, gloss_id, self.signer_id, self.variation_id, self.source_id)

    def same_as(self, other: "PoseSequence") -> bool:
        return (
            self.gloss_id == other.gloss_id
            and self.signer_id == other.signer_id
            and self.variation_id == other.variation_id
            and self.source_id == other.source_id
            and np.array_equal(self.present, other.present)
            and np.array_equal(self.points, other.points)
        )


def normalize_gloss(gloss: str) -> str:
    """Lowercase ASCII, whitespace runs collapsed to underscores."""
    text = unicodedata.normalize("NFKD", gloss).encode("ascii", "ignore").decode("ascii")
    return "_".join(text.lower().split())


@dataclass(frozen=True)
class GlossVocabulary:
    id_to_gloss: tuple[str, ...] = ()

    def __post_init__(self):
        glosses = tuple(normalize_gloss(g) for g in self.id_to_gloss)
        if len(set(glosses)) != len(glosses):
            dupes = [g for g, n in Counter(glosses).items() if n > 1]
            raise VocabularyError(f"duplicate glosses in vocabulary: {dupes}")
        if any(not g for g in glosses):
            raise VocabularyError("empty gloss in vocabulary")
        object.__setattr__(self, "id_to_gloss", glosses)
        object.__setattr__(self, "_index", {g: i for i, g in enumerate(glosses)})

    def __len__(self) -> int:
        return len(self.id_to_gloss)

    def __contains__(self, gloss: str) -> bool:
        return normalize_gloss(gloss) in self._index

    def id_of(self, gloss: str) -> int:
        try:
            return self._index[normalize_gloss(gloss)]
        except KeyError:
            raise VocabularyError(f"unknown gloss {gloss!r}") from None

    def gloss_of(self, gloss_id: int) -> str:
        return self.id_to_gloss[gloss_id]


@dataclass(frozen=True)
class Dataset:
    vocabulary: GlossVocabulary
    sequences: tuple[PoseSequence, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        n = len(self.vocabulary)
        for i, s in enumerate(self.sequences):
            if not 0 <= s.gloss_id < n:
                raise VocabularyError(f"sequence {i} has gloss_id {s.gloss_id} outside vocabulary of size {n}")

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self) -> Iterator[PoseSequence]:
        return iter(self.sequences)

    def __getitem__(self, i: int) -> PoseSequence:
        return self.sequences[i]

    @property
    def num_classes(self) -> int:
        return len(self.vocabulary)

    def labels(self) -> np.ndarray:
        return np.array([s.gloss_id for s in self.sequences], dtype=np.int64)

    def indices_by_class(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i, s in enumerate(self.sequences):
            out.setdefault(s.gloss_id, []).append(i)
        return out

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(self.vocabulary, tuple(self.sequences[i] for i in indices))


# -- JSON-lines I/O ---------------------------------------------------------


def _parse_frame(frame, layout: LandmarkLayout, line: int) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(frame, list):
        raise DatasetFormatError("frame must be an array of points", line)
    if len(frame) != layout.num_points:
        raise LayoutError(f"frame has {len(frame)} points, expected {layout.num_points}", line)
    pts = np.zeros((layout.num_points, 2))
    mask = np.zeros(layout.num_points, dtype=bool)
    for i, p in enumerate(frame):
        if not isinstance(p, list) or len(p) not in (2, 3):
            raise DatasetFormatError(f"point {i} must be [x, y] or [x, y, present]", line)
        try:
            x, y = float(p[0]), float(p[1])
        except (TypeError, ValueError):
            raise DatasetFormatError(f"point {i} has non-numeric coordinates", line) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DatasetFormatError(f"point {i} has non-finite coordinates", line)
        if len(p) == 3:
            if p[2] not in (0, 1):
                raise DatasetFormatError(f"point {i} present flag must be 0 or 1", line)
            present = bool(p[2])
        else:
            present = not (x == 0.0 and y == 0.0)
        if present:
            pts[i] = (x, y)
            mask[i] = True
    return pts, mask


def _parse_record(text: str, line: int, layout: LandmarkLayout) -> dict:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"invalid JSON ({e.msg})", line) from None
    if not isinstance(rec, dict):
        raise DatasetFormatError("record must be a JSON object", line)
    for key in ("gloss", "signer", "frames"):
        if key not in rec:
            raise DatasetFormatError(f"missing key {key!r}", line)
    if not isinstance(rec["gloss"], str) or not normalize_gloss(rec["gloss"]):
        raise DatasetFormatError("gloss must be a non-empty string", line)
    for key in ("signer", "variation"):
        if key in rec and (not isinstance(rec[key], int) or isinstance(rec[key], bool)):
            raise DatasetFormatError(f"{key} must be an integer", line)
    frames = rec["frames"]
    if not isinstance(frames, list) or not frames:
        raise DatasetFormatError("frames must be a non-empty array", line)
    parsed = [_parse_frame(f, layout, line) for f in frames]
    return {
        "gloss": rec["gloss"],
        "signer": rec["signer"],
        "variation": rec.get("variation", 0),
        "source": str(rec.get("source", "")),
        "points": np.stack([p for p, _ in parsed]),
        "present": np.stack([m for _, m in parsed]),
    }


def load_dataset(
    path: str | Path,
    expected_layout: LandmarkLayout = LAYOUT,
    vocabulary: GlossVocabulary | None = None,
    errors: list[DatasetFormatError | VocabularyError] | None = None,
) -> Dataset:
    """Read a JSON-lines dataset, preserving record order.

    Without ``vocabulary`` one is built from glosses in order of first
    appearance; with it, a gloss outside it is a :class:`VocabularyError`.
    Bad records raise, unless an ``errors`` list is supplied, in which case
    each failure is appended there and the record is left out.
    """
    if expected_layout.num_points != NUM_POINTS:
        raise LayoutError(f"unsupported layout with {expected_layout.num_points} points")
    glosses: list[str] = list(vocabulary.id_to_gloss) if vocabulary else []
    index = {g: i for i, g in enumerate(glosses)}
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                rec = _parse_record(text, lineno, expected_layout)
                gloss = normalize_gloss(rec["gloss"])
                if gloss not in index:
                    if vocabulary is not None:
                        raise VocabularyError(f"line {lineno}: unknown gloss {rec['gloss']!r}")
                    index[gloss] = len(glosses)
                    glosses.append(gloss)
            except (DatasetFormatError, VocabularyError) as e:
                if errors is None:
                    raise
                errors.append(e)
                continue
            records.append((rec, index[gloss]))
    vocab = vocabulary if vocabulary is not None else GlossVocabulary(tuple(glosses))
    seqs = tuple(
        PoseSequence(r["points"], r["present"], gid, r["signer"], r["variation"], r["source"])
        for r, gid in records
    )
    return Dataset(vocab, seqs)


def sequence_to_record(seq: PoseSequence, vocabulary: GlossVocabulary) -> dict:
    frames = [
        [[float(x), float(y), int(m)] for (x, y), m in zip(pts, mask)]
        for pts, mask in zip(seq.points, seq.present)
    ]
    return {
        "gloss": vocabulary.gloss_of(seq.gloss_id),
        "signer": int(seq.signer_id),
        "variation": int(seq.variation_id),
        "source": seq.source_id,
        "frames": frames,
    }


def save_dataset(d: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in d.sequences:
            fh.write(json.dumps(sequence_to_record(seq, d.vocabulary), separators=(",", ":")))
            fh.write("\n")


# -- class mappings ---------------------------------------------------------


@dataclass(frozen=True)
class ClassMapping:
    source_vocab: GlossVocabulary
    target_vocab: GlossVocabulary
    pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        pairs = tuple((int(s), int(t)) for s, t in self.pairs)
        seen_src: set[int] = set()
        seen_dst: set[int] = set()
        for s, t in pairs:
            if not 0 <= s < len(self.source_vocab):
                raise VocabularyError(f"source id {s} outside source vocabulary")
            if not 0 <= t < len(self.target_vocab):
                raise VocabularyError(f"target id {t} outside target vocabulary")
            if s in seen_src:
                raise VocabularyError(f"source class {self.source_vocab.gloss_of(s)!r} mapped twice")
            if t in seen_dst:
                raise VocabularyError(
                    f"target class {self.target_vocab.gloss_of(t)!r} is the image of two source classes"
                )
            seen_src.add(s)
            seen_dst.add(t)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "_lookup", dict(pairs))

    def __getitem__(self, source_id: int) -> int:
        return self._lookup[source_id]

    def get(self, source_id: int) -> int | None:
        return self._lookup.get(source_id)

    def inverse(self) -> "ClassMapping":
        return ClassMapping(self.target_vocab, self.source_vocab, tuple((t, s) for s, t in self.pairs))

    @classmethod
    def identity(cls, vocab: GlossVocabulary) -> "ClassMapping":
        return cls(vocab, vocab, tuple((i, i) for i in range(len(vocab))))

    @classmethod
    def from_glosses(
        cls,
        pairs: Iterable[tuple[str, str]],
        source_vocab: GlossVocabulary,
        target_vocab: GlossVocabulary,
    ) -> "ClassMapping":
        return cls(
            source_vocab,
            target_vocab,
            tuple((source_vocab.id_of(s), target_vocab.id_of(t)) for s, t in pairs),
        )


def read_mapping_pairs(path: str | Path) -> list[tuple[str, str]]:
    """Parse a two-column TSV mapping file; ``#`` starts a comment."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].rstrip("\r\n")
            if not text.strip():
                continue
            cols = [c.strip() for c in text.split("\t")]
            cols = [c for c in cols if c]
            if len(cols) != 2:
                raise VocabularyError(f"mapping line {lineno}: expected 2 tab-separated columns, got {len(cols)}")
            pairs.append((normalize_gloss(cols[0]), normalize_gloss(cols[1])))
    return pairs


def load_mapping(
    path: str | Path,
    source_vocab: GlossVocabulary,
    target_vocab: GlossVocabulary | None = None,
) -> ClassMapping:
    """Load a mapping file against known vocabularies.

    Without ``target_vocab`` the target vocabulary is the list of target
    glosses in file order.
    """
    pairs = read_mapping_pairs(path)
    if target_vocab is None:
        targets: list[str] = []
        for _, t in pairs:
            if t not in targets:
                targets.append(t)
        target_vocab = GlossVocabulary(tuple(targets))
    return ClassMapping.from_glosses(pairs, source_vocab, target_vocab)


def save_mapping(m: ClassMapping, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# source_gloss\ttarget_gloss\n")
        for s, t in m.pairs:
            fh.write(f"{m.source_vocab.gloss_of(s)}\t{m.target_vocab.gloss_of(t)}\n")


def map_labels(d: Dataset, m: ClassMapping, drop_unmapped: bool = False) -> Dataset:
    """Translate every label of ``d`` into ``m.target_vocab``."""
    if d.vocabulary != m.source_vocab:
        raise VocabularyError("dataset vocabulary does not match the mapping's source vocabulary")
    out = []
    for i, s in enumerate(d.sequences):
        t = m.get(s.gloss_id)
        if t is None:
            if drop_unmapped:
                continue
            raise VocabularyError(
                f"sequence {i} has unmapped gloss {d.vocabulary.gloss_of(s.gloss_id)!r}"
            )
        out.append(s if t == s.gloss_id else s.with_label(t))
    return Dataset(m.target_vocab, tuple(out))


# -- summary statistics -----------------------------------------------------


@dataclass
class DatasetStats:
    num_classes: int
    classes_present: int
    num_sequences: int
    num_signers: int
    mean_repetitions: float
    per_class_counts: dict[int, int] = field(default_factory=dict)
    repetition_histogram: dict[int, int] = field(default_factory=dict)


def dataset_stats(d: Dataset) -> DatasetStats:
    """Counts per class and the repetition histogram (repetitions -> classes)."""
    counts = Counter(s.gloss_id for s in d.sequences)
    hist = Counter(counts.values())
    present = len(counts)
    return DatasetStats(
        num_classes=len(d.vocabulary),
        classes_present=present,
        num_sequences=len(d.sequences),
        num_signers=len({s.signer_id for s in d.sequences}),
        mean_repetitions=len(d.sequences) / present if present else 0.0,
        per_class_counts=dict(sorted(counts.items())),
        repetition_histogram=dict(sorted(hist.items())),
    )


def merge_vocabularies(vocabs: Sequence[GlossVocabulary]) -> GlossVocabulary:
    glosses: list[str] = []
    for v in vocabs:
        glosses.extend(g for g in v.id_to_gloss if g not in glosses)
    return GlossVocabulary(tuple(glosses))
