"""Timing harness for the submission-scale evaluation path."""

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional
import logging
import sys
import tempfile
import time

import numpy as np
import pandas as pd

from yt8m_lab.models.datamodel import PredictionList
from yt8m_lab.services.metrics import GapAccumulator
from yt8m_lab.services.submission import parse_submission, write_submission

logger = logging.getLogger(__name__)

BENCH_CLASSES = 4800
LABELS_PER_VIDEO = 3


@dataclass
class BenchResult:
    rows: int
    k: int
    threads: int
    wall_time: float
    rows_per_second: float
    bytes_per_second: float
    file_bytes: int
    peak_memory: Optional[int]
    gap: float


def peak_memory_bytes() -> Optional[int]:
    """Peak resident set size of this process, where the platform reports it."""
    try:
        import resource
    except ImportError:
        return None
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    # ru_maxrss is bytes on macOS, kilobytes elsewhere
    return int(peak if sys.platform == "darwin" else peak * 1024)


def synthetic_submission(rows: int, k: int, seed: int, num_classes: int = BENCH_CLASSES):
    """
    Seeded ground truth and matching top-k predictions for ``rows`` videos.

    Returns:
        ``(truth, predictions)``; predictions is a generator so the rows are
        never all held in memory.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, rows, k])))
    width = min(k + LABELS_PER_VIDEO, num_classes)
    k = min(k, width)
    # a stride coprime to num_classes keeps each row's labels distinct
    stride = 37 if np.gcd(37, num_classes) == 1 else 1
    base = rng.integers(0, num_classes, size=rows)
    candidates = (base[:, None] + stride * np.arange(width)) % num_classes
    shuffle = np.argsort(rng.random((rows, width)), axis=1)
    predicted = np.take_along_axis(candidates, shuffle, axis=1)[:, :k]
    confs = -np.sort(-rng.random((rows, k)), axis=1)

    ids = [f"b{i:07d}" for i in range(rows)]
    truth = {
        video_id: frozenset(row)
        for video_id, row in zip(ids, candidates[:, :LABELS_PER_VIDEO].tolist())
    }

    def predictions():
        # row by row, so no Python list of every pair is ever built
        for i, video_id in enumerate(ids):
            yield PredictionList(video_id, tuple(zip(predicted[i].tolist(), confs[i].tolist())))

    return truth, predictions()


def bench_eval(rows: int, k: int = 20, seed: int = 0, threads: int = 1, workdir: Optional[str] = None) -> BenchResult:
    """
    Write a synthetic submission to a temporary file, then time parse plus GAP@k.

    Only the parse and scoring stages are inside the timed region; they are
    the same functions ``eval`` runs, with ``threads`` parse workers.

    ``peak_memory`` is the high-water resident size of the whole process, so
    it also covers generating the file. The generator arrays are dropped
    before timing starts; what stays resident is the ground truth, which
    ``eval`` holds as well.
    """
    truth, preds = synthetic_submission(rows, k, seed)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        path = Path(tmp) / "bench_submission.csv"
        write_submission(preds, path)
        del preds
        size = path.stat().st_size

        start = time.perf_counter()
        report = GapAccumulator(truth, k).add_all(parse_submission(path, threads=threads)).report()
        wall = time.perf_counter() - start

    result = BenchResult(
        rows=rows,
        k=k,
        threads=threads,
        wall_time=wall,
        rows_per_second=rows / wall if wall > 0 else float("inf"),
        bytes_per_second=size / wall if wall > 0 else float("inf"),
        file_bytes=size,
        peak_memory=peak_memory_bytes(),
        gap=report.gap,
    )
    logger.info(f"bench_eval rows={rows} k={k}: {wall:.2f}s, {result.rows_per_second:,.0f} rows/s")
    return result


def write_bench_report(results: List[BenchResult], path) -> None:
    pd.DataFrame([asdict(r) for r in results]).to_csv(path, index=False)
