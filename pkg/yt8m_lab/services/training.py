"""Losses, the mini-batch training loop and training reports."""

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple
import logging
import math
import queue
import threading

import numpy as np
import pandas as pd
from tqdm import tqdm

from yt8m_lab.errors import EmptyDatasetError, EmptyLabelRowError, NonFiniteLossError, ShapeMismatchError
from yt8m_lab.models.specs import TrainConfig
from yt8m_lab.nn.checkpoint import save_checkpoint
from yt8m_lab.nn.graph import ModelGraph
from yt8m_lab.nn.optim import make_optimizer
from yt8m_lab.services.ingest import DatasetHandle
from yt8m_lab.services.metrics import gap_from_scores

logger = logging.getLogger(__name__)

SCORE_FLOOR = 1e-12
SCORE_CEIL = 1.0 - 1e-12

_EPOCH_STREAM = 0
_MONITOR_STREAM = 1


@dataclass
class TrainReport:
    steps_run: int = 0
    loss_curve: List[Tuple[int, float]] = field(default_factory=list)
    train_gap_curve: List[Tuple[int, float]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        losses = pd.DataFrame(self.loss_curve, columns=["step", "loss"])
        gaps = pd.DataFrame(self.train_gap_curve, columns=["step", "gap"])
        return losses.merge(gaps, on="step", how="left")

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


def loss_and_grad(scores: np.ndarray, labels: np.ndarray, loss_kind: str = "sigmoid_ce") -> Tuple[float, np.ndarray]:
    """
    Mean cross-entropy of ``scores`` against multi-hot ``labels`` and its gradient.

    ``sigmoid_ce`` averages per-class binary cross-entropy over batch and
    classes. ``softmax_ce`` normalizes each target row to a distribution and
    averages the row cross-entropies over the batch. Scores are clipped to
    [1e-12, 1 - 1e-12].
    """
    if scores.shape != labels.shape:
        raise ShapeMismatchError(f"scores {scores.shape} vs labels {labels.shape}")
    p = np.clip(np.asarray(scores, dtype=np.float64), SCORE_FLOOR, SCORE_CEIL)
    y = np.asarray(labels, dtype=np.float64)
    batch = max(p.shape[0], 1)

    if loss_kind == "softmax_ce":
        positives = y.sum(axis=1, keepdims=True)
        empty = np.flatnonzero(positives[:, 0] == 0)
        if empty.size:
            raise EmptyLabelRowError(int(empty[0]))
        target = y / positives
        loss = -float(np.sum(target * np.log(p))) / batch
        grad = -target / p / batch
    else:
        count = max(p.size, 1)
        loss = -float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p))) / count
        grad = (p - y) / (p * (1.0 - p)) / count
    return loss, grad.astype(scores.dtype, copy=False)


def default_loss(model) -> str:
    return "softmax_ce" if getattr(model, "output_activation", "sigmoid") == "softmax" else "sigmoid_ce"


def model_features(model) -> str:
    return getattr(model, "features", "all")


def predict_scores(model, X: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    """Inference-mode scores for ``X``, evaluated in chunks."""
    if X.shape[0] == 0:
        return np.zeros((0, model.output_dim))
    return np.concatenate([
        model.forward(X[start:start + batch_size], "infer")
        for start in range(0, X.shape[0], batch_size)
    ])


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def batch_indices(n: int, batch_size: int, shuffle_seed: int) -> Iterator[np.ndarray]:
    """Endless index batches; every epoch is reshuffled and its last partial batch kept."""
    epoch = 0
    while True:
        order = _rng(shuffle_seed, _EPOCH_STREAM, epoch).permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]
        epoch += 1


class BatchPrefetcher:
    """Producer thread filling a bounded queue with batches in shuffle order."""

    _DONE = object()

    def __init__(self, X: np.ndarray, Y: np.ndarray, indices: Iterator[np.ndarray], depth: int, count: int):
        self._queue: "queue.Queue" = queue.Queue(maxsize=depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, args=(X, Y, indices, count), daemon=True)
        self._thread.start()

    def _produce(self, X, Y, indices, count):
        for _ in range(count):
            if self._stop.is_set():
                return
            idx = next(indices)
            self._queue.put((X[idx], Y[idx]))
        self._queue.put(self._DONE)

    def __iter__(self):
        while True:
            item = self._queue.get()
            if item is self._DONE:
                return
            yield item

    def close(self):
        self._stop.set()
        while self._thread.is_alive():
            try:
                self._queue.get_nowait()
            except queue.Empty:
                self._thread.join(timeout=0.05)


class Trainer:
    """Runs the training loop for one model (a ModelGraph or an ensemble)."""

    def __init__(self, model, cfg: TrainConfig, quiet: bool = True):
        self.model = model
        self.cfg = cfg
        self.quiet = quiet
        self.loss_kind = cfg.loss or default_loss(model)

    def _monitor_slice(self, X, Y, X_val, Y_val):
        cfg = self.cfg
        if X_val is not None and X_val.shape[0] and not cfg.include_validation:
            return X_val[:cfg.monitor_size], Y_val[:cfg.monitor_size]
        idx = np.sort(_rng(cfg.shuffle_seed, _MONITOR_STREAM).permutation(X.shape[0])[:cfg.monitor_size])
        return X[idx], Y[idx]

    def fit(
        self,
        X: np.ndarray,
        Y: np.ndarray,
        X_val: Optional[np.ndarray] = None,
        Y_val: Optional[np.ndarray] = None,
    ) -> TrainReport:
        cfg = self.cfg
        opt_cfg = cfg.optimizer
        if cfg.include_validation and X_val is not None and X_val.shape[0]:
            X = np.concatenate([X, X_val])
            Y = np.concatenate([Y, Y_val])
            logger.info(f"Training on train+validation pool of {X.shape[0]} videos")
        if X.shape[0] == 0:
            raise EmptyDatasetError()

        model = self.model
        optimizer = make_optimizer(opt_cfg)
        trainable = model.trainable_keys()
        X_mon, Y_mon = self._monitor_slice(X, Y, X_val, Y_val)
        report = TrainReport()

        indices = batch_indices(X.shape[0], opt_cfg.batch_size, cfg.shuffle_seed)
        prefetcher = None
        if cfg.prefetch > 0:
            prefetcher = BatchPrefetcher(X, Y, indices, cfg.prefetch, opt_cfg.max_steps)
            batches = iter(prefetcher)
        else:
            batches = ((X[idx], Y[idx]) for idx in indices)

        try:
            steps = tqdm(range(1, opt_cfg.max_steps + 1), desc="train", disable=self.quiet, leave=False)
            for step_no in steps:
                xb, yb = next(batches)
                scores = model.forward(xb, "train")
                loss, grad = loss_and_grad(scores, yb, self.loss_kind)
                loss += model.regularization_loss()
                if not math.isfinite(loss):
                    logger.error(f"Non-finite loss at step {step_no}")
                    raise NonFiniteLossError(step_no, report)

                grads = model.backward(grad)
                optimizer.step(model.parameters(), {key: grads[key] for key in trainable})
                report.loss_curve.append((step_no, loss))
                report.steps_run = step_no

                if step_no % cfg.eval_every == 0:
                    gap = gap_from_scores(predict_scores(model, X_mon), Y_mon, cfg.k)
                    report.train_gap_curve.append((step_no, gap))
                    logger.info(f"step {step_no}: loss {loss:.6f}, GAP@{cfg.k} {gap:.5f}")
        finally:
            if prefetcher is not None:
                prefetcher.close()

        if cfg.checkpoint_path and isinstance(model, ModelGraph):
            save_checkpoint(model, cfg.checkpoint_path)
        return report


def dataset_arrays(model, dataset: Optional[DatasetHandle]) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    if dataset is None:
        return None, None
    _, X, Y = dataset.to_arrays(model_features(model), dtype=getattr(model, "dtype", np.float64))
    return X, Y


def train(
    graph,
    dataset: DatasetHandle,
    val_dataset: Optional[DatasetHandle],
    cfg: TrainConfig,
    quiet: bool = True,
):
    """
    Train ``graph`` in place on ``dataset``.

    Returns:
        ``(graph, TrainReport)``.
    """
    X, Y = dataset_arrays(graph, dataset)
    X_val, Y_val = dataset_arrays(graph, val_dataset)
    report = Trainer(graph, cfg, quiet=quiet).fit(X, Y, X_val, Y_val)
    return graph, report
