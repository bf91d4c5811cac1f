"""
Global Average Precision at k, as scored by the competition.

Every video's top-k predictions are pooled into one list sorted by
confidence (descending, ties by video_id then label ascending); GAP is
the sum over that list of precision at each hit times 1 / total positives.
"""

from array import array
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple
import logging

import numpy as np

from yt8m_lab.errors import DuplicatePredictionError, UnknownVideoError
from yt8m_lab.models.datamodel import Pair, PredictionList

logger = logging.getLogger(__name__)

DEFAULT_K = 20


@dataclass
class GapReport:
    gap: float
    num_predictions_pooled: int
    total_positives: int
    precision_recall_points: Optional[List[Tuple[float, float]]] = field(default=None, repr=False)


def top_k(scores: np.ndarray, k: int = DEFAULT_K) -> List[Pair]:
    """The k highest (label, confidence) pairs of one score row, ties by label."""
    row = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = np.argsort(-row, kind="stable")[:k]
    return [(int(label), float(row[label])) for label in order]


def top_k_batch(scores: np.ndarray, k: int = DEFAULT_K) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-wise top-k of a score matrix.

    Returns:
        ``(labels, confidences)``, both of shape (rows, min(k, C)).
    """
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(scores, order, axis=1)


def predictions_from_scores(video_ids: Sequence[str], scores: np.ndarray, k: int = DEFAULT_K) -> Iterable[PredictionList]:
    labels, confs = top_k_batch(np.asarray(scores, dtype=np.float64), k)
    for vid, row_labels, row_confs in zip(video_ids, labels.tolist(), confs.tolist()):
        yield PredictionList(vid, tuple(zip(row_labels, row_confs)))


def _pooled_gap(conf: np.ndarray, hits: np.ndarray, video_rank: np.ndarray, labels: np.ndarray,
                total_positives: int, want_points: bool = False) -> GapReport:
    n = int(conf.shape[0])
    if n == 0 or total_positives == 0:
        return GapReport(0.0, n, int(total_positives), [] if want_points else None)
    order = np.lexsort((labels, video_rank, -conf))
    sorted_hits = hits[order]
    correct = np.cumsum(sorted_hits)
    precision = correct / np.arange(1, n + 1)
    gap = float(np.sum(precision[sorted_hits]) / total_positives)
    points = None
    if want_points:
        recall = correct / total_positives
        points = list(zip(precision.tolist(), recall.tolist()))
    return GapReport(min(1.0, max(0.0, gap)), n, int(total_positives), points)


class GapAccumulator:
    """
    Streaming GAP@k over PredictionLists.

    Pooled entries are kept in compact typed arrays, so a 700k-video
    submission never materializes Python objects per pair.
    """

    def __init__(self, ground_truth: Mapping[str, FrozenSet[int]], k: int = DEFAULT_K):
        self.ground_truth = ground_truth
        self.k = k
        self.total_positives = sum(len(labels) for labels in ground_truth.values())
        self._conf = array("d")
        self._hits = array("b")
        self._video = array("i")
        self._labels = array("q")
        self._video_index: Dict[str, int] = {}
        self._repeated: Dict[int, set] = {}

    def add(self, preds: PredictionList) -> None:
        vid = preds.video_id
        truth = self.ground_truth.get(vid)
        if truth is None:
            raise UnknownVideoError(vid)
        pairs = preds.pairs[:self.k]
        labels = [p[0] for p in pairs]

        vidx = self._video_index.get(vid)
        if vidx is None:
            vidx = self._video_index[vid] = len(self._video_index)
        else:
            seen = self._repeated.setdefault(vidx, self._labels_of(vidx))
            for label in labels:
                if label in seen:
                    raise DuplicatePredictionError(vid, label)
            seen.update(labels)

        self._conf.extend([p[1] for p in pairs])
        self._hits.extend([label in truth for label in labels])
        self._video.extend([vidx] * len(pairs))
        self._labels.extend(labels)

    def _labels_of(self, vidx: int) -> set:
        video = _view(self._video, np.int32)
        return set(_view(self._labels, np.int64)[video == vidx].tolist())

    def add_all(self, predictions: Iterable[PredictionList]) -> "GapAccumulator":
        for preds in predictions:
            self.add(preds)
        return self

    def report(self, with_points: bool = False) -> GapReport:
        ids = list(self._video_index)
        rank_of = np.empty(len(ids), dtype=np.int64)
        rank_of[sorted(range(len(ids)), key=ids.__getitem__)] = np.arange(len(ids))
        return _pooled_gap(
            _view(self._conf, np.float64),
            _view(self._hits, np.int8).astype(bool),
            rank_of[_view(self._video, np.int32)],
            _view(self._labels, np.int64),
            self.total_positives,
            want_points=with_points,
        )


def _view(values: array, dtype) -> np.ndarray:
    if not len(values):
        return np.zeros(0, dtype=dtype)
    return np.frombuffer(values, dtype=dtype)


def gap_at_k(
    predictions: Iterable[PredictionList],
    ground_truth: Mapping[str, FrozenSet[int]],
    k: int = DEFAULT_K,
    with_points: bool = False,
) -> GapReport:
    """GAP@k of ``predictions`` against ``ground_truth`` (video_id -> label set)."""
    return GapAccumulator(ground_truth, k).add_all(predictions).report(with_points)


def gap_from_scores(scores: np.ndarray, truth: np.ndarray, k: int = DEFAULT_K) -> float:
    """
    GAP@k for a dense score matrix against a multi-hot truth matrix.

    Row order stands in for video_id order in the tie-break.
    """
    if scores.shape[0] == 0:
        return 0.0
    labels, confs = top_k_batch(scores, k)
    hits = np.take_along_axis(truth, labels, axis=1) > 0
    rows = np.repeat(np.arange(scores.shape[0]), labels.shape[1])
    return _pooled_gap(confs.reshape(-1), hits.reshape(-1), rows, labels.reshape(-1), int(truth.sum())).gap


def gap_oracle(
    predictions: Iterable[PredictionList],
    ground_truth: Mapping[str, FrozenSet[int]],
    k: int = DEFAULT_K,
) -> float:
    """Naive O(N^2) GAP: precision is recounted from scratch at every hit. Test reference only."""
    pooled = []
    seen = set()
    for preds in predictions:
        if preds.video_id not in ground_truth:
            raise UnknownVideoError(preds.video_id)
        for label, conf in preds.pairs[:k]:
            if (preds.video_id, label) in seen:
                raise DuplicatePredictionError(preds.video_id, label)
            seen.add((preds.video_id, label))
            pooled.append((conf, preds.video_id, label, label in ground_truth[preds.video_id]))
    total = sum(len(v) for v in ground_truth.values())
    if total == 0:
        return 0.0
    pooled.sort(key=lambda t: (-t[0], t[1], t[2]))

    gap = 0.0
    for i, entry in enumerate(pooled):
        if entry[3]:
            correct = sum(1 for e in pooled[:i + 1] if e[3])
            gap += (correct / (i + 1)) * (1.0 / total)
    return gap
