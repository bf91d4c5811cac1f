"""Core domain types: features, examples, vocabulary and prediction lists."""

from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, Sequence, Tuple
import math

import numpy as np

from yt8m_lab.errors import (
    BadDimensionError,
    BadVideoIdError,
    DuplicatePredictionError,
    EmptyVideoIdError,
    LabelOutOfRangeError,
    LabValidationError,
    NonFiniteFeatureError,
)

DEFAULT_RGB_DIM = 1024
DEFAULT_AUDIO_DIM = 128
DEFAULT_NUM_CLASSES = 4800

Pair = Tuple[int, float]


def _frozen_f32(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float32).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Mean-pooled visual and audio embeddings of one video."""

    rgb: np.ndarray
    audio: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rgb", _frozen_f32(self.rgb))
        object.__setattr__(self, "audio", _frozen_f32(self.audio))

    @property
    def dim(self) -> int:
        return self.rgb.shape[0] + self.audio.shape[0]

    def concat(self) -> np.ndarray:
        """RGB followed by audio, as one float32 vector."""
        return np.concatenate([self.rgb, self.audio])

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return np.array_equal(self.rgb, other.rgb) and np.array_equal(self.audio, other.audio)


@dataclass(frozen=True, eq=False)
class Example:
    """One video: id, ground-truth label set and features."""

    video_id: str
    labels: FrozenSet[int]
    features: FeatureVector

    def __post_init__(self):
        object.__setattr__(self, "labels", frozenset(int(l) for l in self.labels))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Example):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.labels == other.labels
            and self.features == other.features
        )

    def __repr__(self) -> str:
        return f"Example(video_id={self.video_id!r}, labels={sorted(self.labels)}, dim={self.features.dim})"


@dataclass(frozen=True)
class Vocabulary:
    num_classes: int = DEFAULT_NUM_CLASSES

    def __post_init__(self):
        if self.num_classes < 1:
            raise LabValidationError(f"num_classes must be >= 1, got {self.num_classes}")

    def check_label(self, index: int) -> None:
        if index < 0 or index >= self.num_classes:
            raise LabelOutOfRangeError(index, self.num_classes)


def check_video_id(video_id: str) -> None:
    if not video_id:
        raise EmptyVideoIdError()
    if "," in video_id or any(ch.isspace() for ch in video_id):
        raise BadVideoIdError(video_id)


def sort_pairs(pairs: Iterable[Pair]) -> Tuple[Pair, ...]:
    """Order pairs by confidence descending, then label ascending."""
    return tuple(sorted(pairs, key=lambda p: (-p[1], p[0])))


@dataclass(frozen=True)
class PredictionList:
    """
    Top-k (label, confidence) pairs predicted for one video.

    Construction clamps confidences into [0, 1] and sorts the pairs by
    confidence descending with ties broken by ascending label.
    """

    video_id: str
    pairs: Tuple[Pair, ...] = field(default_factory=tuple)

    def __post_init__(self):
        cleaned = []
        seen = set()
        for label, conf in self.pairs:
            label = int(label)
            conf = float(conf)
            if math.isnan(conf):
                raise LabValidationError(f"NaN confidence for video {self.video_id!r} label {label}")
            if label in seen:
                raise DuplicatePredictionError(self.video_id, label)
            seen.add(label)
            cleaned.append((label, min(1.0, max(0.0, conf))))
        object.__setattr__(self, "pairs", sort_pairs(cleaned))

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def labels(self) -> Tuple[int, ...]:
        return tuple(p[0] for p in self.pairs)

    @property
    def confidences(self) -> Tuple[float, ...]:
        return tuple(p[1] for p in self.pairs)

    def truncated(self, k: int) -> "PredictionList":
        if len(self.pairs) <= k:
            return self
        return PredictionList(self.video_id, self.pairs[:k])

    def is_sorted(self) -> bool:
        return self.pairs == sort_pairs(self.pairs)


def validate_example(
    ex: Example,
    vocab: Vocabulary,
    rgb_dim: int = DEFAULT_RGB_DIM,
    audio_dim: int = DEFAULT_AUDIO_DIM,
) -> Example:
    """
    Check an Example against the vocabulary and the dataset's feature geometry.

    Returns:
        The same example, unchanged, when every invariant holds.
    """
    check_video_id(ex.video_id)

    expected = rgb_dim + audio_dim
    if ex.features.dim != expected:
        raise BadDimensionError(expected, ex.features.dim)
    if ex.features.rgb.shape[0] != rgb_dim:
        raise BadDimensionError(rgb_dim, ex.features.rgb.shape[0], what="rgb")

    for label in sorted(ex.labels):
        vocab.check_label(label)

    if not (np.isfinite(ex.features.rgb).all() and np.isfinite(ex.features.audio).all()):
        raise NonFiniteFeatureError(ex.video_id)
    return ex


def multi_hot(label_sets: Sequence[FrozenSet[int]], num_classes: int, dtype=np.float64) -> np.ndarray:
    """Stack label sets into a (n, num_classes) 0/1 matrix."""
    out = np.zeros((len(label_sets), num_classes), dtype=dtype)
    for row, labels in enumerate(label_sets):
        if labels:
            out[row, list(labels)] = 1.0
    return out
