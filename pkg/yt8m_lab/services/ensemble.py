"""Model ensembles (averaging and stacking) and submission-file averaging."""

from array import array
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from yt8m_lab.errors import InvalidConfigError, ShapeMismatchError
from yt8m_lab.models.datamodel import PredictionList, Vocabulary
from yt8m_lab.models.specs import EnsembleSpec
from yt8m_lab.nn.graph import ModelGraph
from yt8m_lab.services import modelzoo
from yt8m_lab.services.submission import parse_submission, write_submission

logger = logging.getLogger(__name__)


def _check_members(graphs: Sequence[ModelGraph]) -> None:
    if not graphs:
        raise ShapeMismatchError("an ensemble needs at least one member")
    first = graphs[0]
    for i, g in enumerate(graphs[1:], 1):
        if g.input_dim != first.input_dim or g.output_dim != first.output_dim:
            raise ShapeMismatchError(
                f"member {i} maps {g.input_dim}->{g.output_dim}, member 0 maps {first.input_dim}->{first.output_dim}"
            )


class _Ensemble:
    """Shared parameter bookkeeping; member keys are prefixed ``member<i>/``."""

    def __init__(self, members: Sequence[ModelGraph]):
        self.members = list(members)
        self.dtype = self.members[0].dtype
        self.features = self.members[0].features
        self.input_dim = self.members[0].input_dim

    def _parts(self) -> List[Tuple[str, ModelGraph]]:
        return [(f"member{i}/", m) for i, m in enumerate(self.members)]

    def _trainable_parts(self) -> List[Tuple[str, ModelGraph]]:
        return self._parts()

    def parameters(self) -> Dict[str, np.ndarray]:
        return {prefix + key: arr for prefix, g in self._parts() for key, arr in g.parameters().items()}

    def trainable_keys(self) -> List[str]:
        return [prefix + key for prefix, g in self._trainable_parts() for key in g.trainable_keys()]

    def parameter_count(self, trainable_only: bool = False) -> int:
        parts = self._trainable_parts() if trainable_only else self._parts()
        return sum(g.parameter_count(trainable_only) for _, g in parts)

    def regularization_loss(self) -> float:
        return float(sum(g.regularization_loss() for _, g in self._trainable_parts()))

    def backward(self, grad_out: np.ndarray) -> Dict[str, np.ndarray]:
        return self.backward_with_input(grad_out)[0]


class AverageEnsemble(_Ensemble):
    """Arithmetic mean of the members' outputs."""

    def __init__(self, members: Sequence[ModelGraph]):
        _check_members(members)
        super().__init__(members)
        self.output_dim = self.members[0].output_dim
        heads = {m.output_activation for m in self.members}
        self.output_activation = heads.pop() if len(heads) == 1 else "sigmoid"

    def forward(self, batch: np.ndarray, mode: Optional[str] = None, reuse_masks: bool = False) -> np.ndarray:
        total = None
        for m in self.members:
            out = m.forward(batch, mode, reuse_masks)
            total = out.copy() if total is None else total + out
        return total * (1.0 / len(self.members))

    def backward_with_input(self, grad_out: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        share = grad_out * (1.0 / len(self.members))
        grads: Dict[str, np.ndarray] = {}
        dx = None
        for prefix, m in self._parts():
            member_grads, member_dx = m.backward_with_input(share)
            grads.update({prefix + key: g for key, g in member_grads.items()})
            dx = member_dx if dx is None else dx + member_dx
        return grads, dx


class StackedEnsemble(_Ensemble):
    """
    Members' outputs concatenated along features and fed to a meta network.

    Meta parameters are prefixed ``meta/``. With ``freeze_members`` only the
    meta network is trainable.
    """

    def __init__(self, members: Sequence[ModelGraph], meta: ModelGraph, freeze_members: bool = False):
        _check_members(members)
        super().__init__(members)
        widths = [m.output_dim for m in self.members]
        if meta.input_dim != sum(widths):
            raise ShapeMismatchError(f"meta network reads {meta.input_dim} features, members emit {sum(widths)}")
        self.meta = meta
        self.freeze_members = freeze_members
        self.output_dim = meta.output_dim
        self.output_activation = meta.output_activation
        self._splits = np.cumsum(widths)[:-1]

    def _parts(self):
        return super()._parts() + [("meta/", self.meta)]

    def _trainable_parts(self):
        if self.freeze_members:
            return [("meta/", self.meta)]
        return self._parts()

    def forward(self, batch: np.ndarray, mode: Optional[str] = None, reuse_masks: bool = False) -> np.ndarray:
        stacked = np.concatenate([m.forward(batch, mode, reuse_masks) for m in self.members], axis=1)
        return self.meta.forward(stacked, mode, reuse_masks)

    def backward_with_input(self, grad_out: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
        meta_grads, d_stacked = self.meta.backward_with_input(grad_out)
        grads = {f"meta/{key}": g for key, g in meta_grads.items()}
        dx = None
        for (prefix, m), d_member in zip(super()._parts(), np.split(d_stacked, self._splits, axis=1)):
            member_grads, member_dx = m.backward_with_input(np.ascontiguousarray(d_member))
            grads.update({prefix + key: g for key, g in member_grads.items()})
            dx = member_dx if dx is None else dx + member_dx
        return grads, dx


def average_models(graphs: Sequence[ModelGraph], batch: np.ndarray, mode: str = "infer") -> np.ndarray:
    """Mean of the members' forward outputs on ``batch``."""
    return AverageEnsemble(graphs).forward(batch, mode)


def stack_models(graphs: Sequence[ModelGraph], meta: ModelGraph, batch: np.ndarray, mode: str = "infer") -> np.ndarray:
    return StackedEnsemble(graphs, meta).forward(batch, mode)


def member_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def build_ensemble(spec: EnsembleSpec, input_dim: int, num_classes: int, seed: int = 0, dtype=np.float64):
    """
    Build an AverageEnsemble or StackedEnsemble from ``spec``.

    Every member gets its own seed derived from ``seed`` and its position.
    """
    if spec.kind == "average_files":
        raise InvalidConfigError("average_files ensembles combine submission files, not models")
    members = [
        modelzoo.build(member, input_dim, num_classes, member_seed(seed, i), dtype)
        for i, member in enumerate(spec.members)
    ]
    if spec.kind == "average_models":
        return AverageEnsemble(members)

    meta_input = sum(m.output_dim for m in members)
    meta_seed = member_seed(seed, len(members))
    if spec.meta is not None:
        meta = modelzoo.build(spec.meta, meta_input, num_classes, meta_seed, dtype)
    else:
        meta = modelzoo.build_meta(meta_input, num_classes, meta_seed, dtype=dtype)
    return StackedEnsemble(members, meta, freeze_members=spec.freeze_members)


def ensemble_graphs(model) -> List[Tuple[str, ModelGraph]]:
    """(name, graph) pairs to checkpoint for an ensemble."""
    named = [(f"member{i}", m) for i, m in enumerate(model.members)]
    if isinstance(model, StackedEnsemble):
        named.append(("meta", model.meta))
    return named


# submission-file averaging

class _ParsedFile:
    def __init__(self, path: str):
        self.path = path
        self.video_ids: List[str] = []
        self.counts = array("q")
        self.labels = array("q")
        self.confs = array("d")


def _load_submission(path: str, vocab: Optional[Vocabulary]) -> _ParsedFile:
    parsed = _ParsedFile(path)
    for preds in parse_submission(path, vocab):
        parsed.video_ids.append(preds.video_id)
        parsed.counts.append(len(preds.pairs))
        parsed.labels.extend(preds.labels)
        parsed.confs.extend(preds.confidences)
    logger.info(f"Parsed {len(parsed.video_ids)} rows from {path}")
    return parsed


def _as_array(values: array, dtype) -> np.ndarray:
    if not len(values):
        return np.zeros(0, dtype=dtype)
    return np.frombuffer(values, dtype=dtype)


def average_files(
    paths: Sequence[str],
    k: int,
    out_path,
    threads: int = 4,
    vocab: Optional[Vocabulary] = None,
    round_digits: Optional[int] = None,
) -> int:
    """
    Average submission files per (video, label) and keep the top ``k`` per video.

    A label missing from a file's row counts as confidence 0 in that file.
    Videos present in any file are emitted, in ascending video_id order.

    Returns:
        Number of rows written.
    """
    if len(paths) < 2:
        raise InvalidConfigError(f"average_files needs at least 2 files, got {len(paths)}")
    n = len(paths)
    with ThreadPoolExecutor(max_workers=max(1, min(threads, n))) as pool:
        parsed = list(pool.map(lambda p: _load_submission(str(p), vocab), paths))

    video_index: Dict[str, int] = {}
    vids, labels, confs = [], [], []
    id_sets = []
    for f in parsed:
        rows = np.array([video_index.setdefault(v, len(video_index)) for v in f.video_ids], dtype=np.int64)
        vids.append(np.repeat(rows, _as_array(f.counts, np.int64)))
        labels.append(_as_array(f.labels, np.int64))
        confs.append(_as_array(f.confs, np.float64))
        id_sets.append(set(f.video_ids))

    union = set(video_index)
    for f, ids in zip(parsed, id_sets):
        if len(ids) != len(union):
            logger.warning(f"{f.path} covers {len(ids)} of {len(union)} videos; missing videos count as zero")

    vid = np.concatenate(vids)
    label = np.concatenate(labels)
    conf = np.concatenate(confs)

    ids = list(video_index)
    rank_of = np.empty(len(ids), dtype=np.int64)
    rank_of[sorted(range(len(ids)), key=ids.__getitem__)] = np.arange(len(ids))
    sorted_ids = sorted(ids)

    pairs_by_rank: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    if conf.size:
        rank = rank_of[vid]
        # group by (video, label); confidences ascending within a group so sums ignore file order
        order = np.lexsort((conf, label, rank))
        rank, label, conf = rank[order], label[order], conf[order]
        starts = np.flatnonzero(np.r_[True, (rank[1:] != rank[:-1]) | (label[1:] != label[:-1])])
        mean = np.add.reduceat(conf, starts) / n
        rank, lab = rank[starts], label[starts]

        order = np.lexsort((lab, -mean, rank))
        rank, lab, mean = rank[order], lab[order], mean[order]
        group_start = np.flatnonzero(np.r_[True, rank[1:] != rank[:-1]])
        group_len = np.diff(np.r_[group_start, rank.size])
        position = np.arange(rank.size) - np.repeat(group_start, group_len)
        keep = position < k
        rank, lab, mean = rank[keep], lab[keep], mean[keep]
        bounds = np.flatnonzero(np.r_[True, rank[1:] != rank[:-1]])
        for start, stop in zip(bounds, np.r_[bounds[1:], rank.size]):
            pairs_by_rank[int(rank[start])] = (lab[start:stop], mean[start:stop])

    empty = (np.zeros(0, dtype=np.int64), np.zeros(0))

    def rows():
        for r, video_id in enumerate(sorted_ids):
            row_labels, row_means = pairs_by_rank.get(r, empty)
            yield PredictionList(video_id, tuple(zip(row_labels.tolist(), row_means.tolist())))

    count = write_submission(rows(), out_path, round_digits=round_digits)
    logger.info(f"Averaged {n} files into {out_path}: {count} videos, top {k}")
    return count
