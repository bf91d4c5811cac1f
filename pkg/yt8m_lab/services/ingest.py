"""Dataset ingestion: native YT8V files, TFRecord files and synthetic generation."""

from typing import Callable, Iterable, Iterator, List, Optional, Tuple
import logging
import struct

import numpy as np

from yt8m_lab.config import settings
from yt8m_lab.errors import BadFormatError, DataIOError, InvalidConfigError, TruncatedRecordError
from yt8m_lab.models.datamodel import (
    Example,
    FeatureVector,
    Vocabulary,
    multi_hot,
    validate_example,
)
from yt8m_lab.models.specs import SyntheticConfig
from yt8m_lab.services.tfrecord import (
    decode_video_example,
    encode_video_example,
    read_tfrecord_stream,
    write_tfrecord_stream,
)

logger = logging.getLogger(__name__)

NATIVE_MAGIC = b"YT8V"
NATIVE_VERSION = 1

_TEACHER_STREAM = 0
_SAMPLE_STREAM = 1
_MAX_RESAMPLE_ROUNDS = 100


class DatasetHandle:
    """
    A re-iterable source of validated Examples.

    ``count`` is ``None`` for streams whose length is unknown until read.
    """

    def __init__(
        self,
        source: str,
        vocab: Vocabulary,
        rgb_dim: int,
        audio_dim: int,
        reader: Callable[[], Iterator[Example]],
        count: Optional[int] = None,
    ):
        self.source = source
        self.vocab = vocab
        self.rgb_dim = rgb_dim
        self.audio_dim = audio_dim
        self.count = count
        self._reader = reader

    @classmethod
    def from_examples(
        cls,
        examples: List[Example],
        vocab: Vocabulary,
        rgb_dim: int,
        audio_dim: int,
        source: str = "memory",
    ) -> "DatasetHandle":
        examples = list(examples)
        return cls(source, vocab, rgb_dim, audio_dim, lambda: iter(examples), count=len(examples))

    def __iter__(self) -> Iterator[Example]:
        for ex in self._reader():
            yield validate_example(ex, self.vocab, self.rgb_dim, self.audio_dim)

    def __len__(self) -> int:
        if self.count is None:
            self.count = sum(1 for _ in self._reader())
        return self.count

    def examples(self) -> List[Example]:
        return list(self)

    @property
    def feature_dim(self) -> int:
        return self.rgb_dim + self.audio_dim

    def ground_truth(self) -> dict:
        """Map video_id -> label set."""
        return {ex.video_id: ex.labels for ex in self}

    def to_arrays(self, features: str = "all", dtype=np.float64) -> Tuple[List[str], np.ndarray, np.ndarray]:
        """
        Materialize the dataset.

        Returns:
            ``(video_ids, X, Y)`` with X of shape (n, selected feature dim)
            and Y the multi-hot label matrix (n, num_classes).
        """
        examples = self.examples()
        ids = [ex.video_id for ex in examples]
        if examples:
            X = np.stack([ex.features.concat() for ex in examples]).astype(dtype)
        else:
            X = np.zeros((0, self.feature_dim), dtype=dtype)
        Y = multi_hot([ex.labels for ex in examples], self.vocab.num_classes, dtype=dtype)
        return ids, select_features(X, features, self.rgb_dim), Y


def select_features(X: np.ndarray, features: str, rgb_dim: int) -> np.ndarray:
    if features == "rgb":
        return X[:, :rgb_dim]
    if features == "audio":
        return X[:, rgb_dim:]
    return X


def selected_dim(features: str, rgb_dim: int, audio_dim: int) -> int:
    return {"rgb": rgb_dim, "audio": audio_dim}.get(features, rgb_dim + audio_dim)


# native format

def write_native(path, examples: Iterable[Example], num_classes: int, rgb_dim: int, audio_dim: int) -> int:
    """
    Write examples in the YT8V layout.

    Returns:
        Number of records written.
    """
    count = 0
    try:
        with open(path, "wb") as fh:
            fh.write(NATIVE_MAGIC + bytes([NATIVE_VERSION]))
            fh.write(struct.pack("<III", num_classes, rgb_dim, audio_dim))
            for ex in examples:
                vid = ex.video_id.encode("utf-8")
                labels = sorted(ex.labels)
                fh.write(struct.pack("<H", len(vid)) + vid)
                fh.write(struct.pack(f"<H{len(labels)}I", len(labels), *labels))
                fh.write(np.asarray(ex.features.rgb, dtype="<f4").tobytes())
                fh.write(np.asarray(ex.features.audio, dtype="<f4").tobytes())
                count += 1
    except OSError as e:
        logger.error(f"Error writing dataset {path}: {e}")
        raise DataIOError(f"cannot write {path}: {e}") from e
    return count


def _read_exact(fh, n: int, offset: int) -> bytes:
    chunk = fh.read(n)
    if len(chunk) < n:
        raise TruncatedRecordError(offset)
    return chunk


def read_native_header(path) -> Tuple[int, int, int]:
    try:
        with open(path, "rb") as fh:
            head = fh.read(17)
    except OSError as e:
        raise DataIOError(f"cannot open {path}: {e}") from e
    if len(head) < 17 or head[:4] != NATIVE_MAGIC:
        raise BadFormatError(f"{path}: not a YT8V dataset")
    if head[4] != NATIVE_VERSION:
        raise BadFormatError(f"{path}: unsupported YT8V version {head[4]}")
    return struct.unpack("<III", head[5:17])


def iter_native(path) -> Iterator[Example]:
    _, rgb_dim, audio_dim = read_native_header(path)
    try:
        fh = open(path, "rb")
    except OSError as e:
        raise DataIOError(f"cannot open {path}: {e}") from e
    with fh:
        fh.seek(17)
        offset = 17
        while True:
            head = fh.read(2)
            if not head:
                return
            if len(head) < 2:
                raise TruncatedRecordError(offset)
            (id_len,) = struct.unpack("<H", head)
            try:
                video_id = _read_exact(fh, id_len, offset).decode("utf-8")
            except UnicodeDecodeError as e:
                raise BadFormatError(f"{path}: video id at byte {offset} is not UTF-8") from e
            (n_labels,) = struct.unpack("<H", _read_exact(fh, 2, offset))
            labels = struct.unpack(f"<{n_labels}I", _read_exact(fh, 4 * n_labels, offset))
            if len(set(labels)) != n_labels:
                raise BadFormatError(f"{path}: duplicate labels for video {video_id!r} at byte {offset}")
            rgb = np.frombuffer(_read_exact(fh, 4 * rgb_dim, offset), dtype="<f4")
            audio = np.frombuffer(_read_exact(fh, 4 * audio_dim, offset), dtype="<f4")
            yield Example(video_id, frozenset(labels), FeatureVector(rgb, audio))
            offset = fh.tell()


# format dispatch

def load_dataset(
    path,
    vocab: Optional[Vocabulary] = None,
    rgb_dim: Optional[int] = None,
    audio_dim: Optional[int] = None,
) -> DatasetHandle:
    """
    Open a YT8V or TFRecord dataset, sniffed from the file's first bytes.

    YT8V files carry their own geometry; TFRecord files use the given
    dimensions or the configured defaults.
    """
    path = str(path)
    try:
        with open(path, "rb") as fh:
            magic = fh.read(4)
    except OSError as e:
        raise DataIOError(f"cannot open {path}: {e}") from e

    if magic == NATIVE_MAGIC:
        num_classes, file_rgb, file_audio = read_native_header(path)
        if rgb_dim is not None and rgb_dim != file_rgb or audio_dim is not None and audio_dim != file_audio:
            logger.warning(f"{path}: stored dims {file_rgb}+{file_audio} override requested {rgb_dim}+{audio_dim}")
        vocab = vocab or Vocabulary(num_classes)
        return DatasetHandle(path, vocab, file_rgb, file_audio, lambda: iter_native(path))

    vocab = vocab or Vocabulary(settings.num_classes)
    rgb_dim = settings.rgb_dim if rgb_dim is None else rgb_dim
    audio_dim = settings.audio_dim if audio_dim is None else audio_dim

    def reader() -> Iterator[Example]:
        for payload in read_tfrecord_stream(path):
            yield decode_video_example(payload, vocab, rgb_dim, audio_dim)

    return DatasetHandle(path, vocab, rgb_dim, audio_dim, reader)


def write_dataset(dataset: DatasetHandle, path, fmt: str = "native") -> int:
    if fmt == "tfrecord":
        count = write_tfrecord_stream(path, (encode_video_example(ex) for ex in dataset))
    elif fmt == "native":
        count = write_native(path, dataset, dataset.vocab.num_classes, dataset.rgb_dim, dataset.audio_dim)
    else:
        raise InvalidConfigError(f"unknown dataset format {fmt!r}")
    logger.info(f"Wrote {count} examples to {path} ({fmt})")
    return count


# synthetic data

def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def synthetic_teacher(cfg: SyntheticConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Hidden linear teacher ``(W, b)`` shared by every split of a seed.

    Each class gets sparse normal weights (at least one nonzero) and a bias
    placing its positive rate between Phi(-1) and Phi(1) under N(0, 1) inputs.
    """
    d = cfg.rgb_dim + cfg.audio_dim
    rng = _stream(cfg.seed, _TEACHER_STREAM)
    W = rng.standard_normal((d, cfg.num_classes))
    keep = rng.random((d, cfg.num_classes)) < cfg.teacher_sparsity
    forced = rng.integers(0, d, size=cfg.num_classes)
    keep[forced, np.arange(cfg.num_classes)] = True
    W = W * keep
    b = np.linalg.norm(W, axis=0) * rng.uniform(-1.0, 1.0, size=cfg.num_classes)
    return W, b


def generate_synthetic(cfg: SyntheticConfig) -> DatasetHandle:
    """
    Deterministic multi-label dataset labeled by a hidden linear teacher.

    Label c is positive iff ``x . w_c + b_c > 0`` on the clean features;
    Gaussian noise of ``noise_std`` is added to the features afterwards.
    Videos without positives are resampled.
    """
    vocab = Vocabulary(cfg.num_classes)
    d = cfg.rgb_dim + cfg.audio_dim
    n = cfg.num_videos
    if n == 0:
        return DatasetHandle.from_examples([], vocab, cfg.rgb_dim, cfg.audio_dim, source="synthetic")

    W, b = synthetic_teacher(cfg)
    rng = _stream(cfg.seed, _SAMPLE_STREAM, cfg.split)
    X = rng.standard_normal((n, d))
    Y = X @ W + b > 0

    for _ in range(_MAX_RESAMPLE_ROUNDS):
        empty = np.flatnonzero(~Y.any(axis=1))
        if empty.size == 0:
            break
        X[empty] = rng.standard_normal((empty.size, d))
        Y[empty] = X[empty] @ W + b > 0
    else:
        empty = np.flatnonzero(~Y.any(axis=1))
        if empty.size:
            logger.warning(f"{empty.size} synthetic videos kept no positive label; using their top teacher score")
            Y[empty, np.argmax(X[empty] @ W + b, axis=1)] = True

    X = (X + cfg.noise_std * rng.standard_normal((n, d))).astype(np.float32)

    examples = [
        Example(
            video_id=f"s{cfg.split}v{i:07d}",
            labels=frozenset(np.flatnonzero(Y[i]).tolist()),
            features=FeatureVector(X[i, :cfg.rgb_dim], X[i, cfg.rgb_dim:]),
        )
        for i in range(n)
    ]
    logger.info(f"Generated {n} synthetic videos ({cfg.num_classes} classes, {d} features, seed {cfg.seed})")
    return DatasetHandle.from_examples(examples, vocab, cfg.rgb_dim, cfg.audio_dim, source="synthetic")
