"""
Competition submission files.

One header line ``VideoId,LabelConfidencePairs`` followed by one row per
video: ``<video_id>,<label> <conf> <label> <conf> ...`` with pairs in
descending confidence order.
"""

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from itertools import islice
from typing import Iterable, Iterator, List, Optional, TextIO
import logging
import re

from yt8m_lab.errors import (
    BadHeaderError,
    BadNumberError,
    DataIOError,
    DuplicateLabelError,
    DuplicateVideoError,
    LabError,
    LabValidationError,
    LabelOutOfRangeError,
    MalformedRowError,
    OddTokenCountError,
)
from yt8m_lab.models.datamodel import PredictionList, Vocabulary, check_video_id

logger = logging.getLogger(__name__)

HEADER = "VideoId,LabelConfidencePairs"

# labels are held as signed 64-bit integers downstream
MAX_LABEL = 2 ** 63 - 1

_NUMBER_CHARS = re.compile(r"[0-9.eE+-]+")


def format_confidence(value: float, round_digits: Optional[int] = None) -> str:
    """
    Shortest decimal that reads back as ``value``.

    With ``round_digits`` the value is written with at most that many
    fractional digits, trailing zeros dropped.
    """
    if round_digits is not None:
        text = f"{value:.{round_digits}f}"
        if "." in text:
            text = text.rstrip("0").rstrip(".")
        return text
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def format_row(preds: PredictionList, round_digits: Optional[int] = None) -> str:
    body = " ".join(f"{label} {format_confidence(conf, round_digits)}" for label, conf in preds.pairs)
    return f"{preds.video_id},{body}"


def write_submission(preds: Iterable[PredictionList], path, round_digits: Optional[int] = None) -> int:
    """
    Write a submission file with LF line endings.

    Returns:
        Number of rows written, excluding the header.
    """
    seen = set()
    count = 0
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(HEADER + "\n")
            for p in preds:
                if p.video_id in seen:
                    raise DuplicateVideoError(p.video_id)
                seen.add(p.video_id)
                check_video_id(p.video_id)
                fh.write(format_row(p, round_digits) + "\n")
                count += 1
    except OSError as e:
        logger.error(f"Error writing submission {path}: {e}")
        raise DataIOError(f"cannot write {path}: {e}") from e
    logger.info(f"Wrote {count} rows to {path}")
    return count


def _check_labels(tokens, line_no: int) -> None:
    joined = "".join(tokens)
    if joined.isascii() and joined.isdigit():
        return
    for token in tokens:
        if not (token.isascii() and token.isdigit()):
            raise BadNumberError(line_no, token)


def _parse_confidences(tokens, line_no: int):
    if tokens and not _NUMBER_CHARS.fullmatch("".join(tokens)):
        for token in tokens:
            if not _NUMBER_CHARS.fullmatch(token):
                raise BadNumberError(line_no, token)
    values = []
    for token in tokens:
        try:
            values.append(float(token))
        except ValueError:
            raise BadNumberError(line_no, token) from None
    return values


def parse_row(line: str, line_no: int, vocab: Optional[Vocabulary] = None) -> PredictionList:
    video_id, sep, rest = line.partition(",")
    if not sep:
        raise MalformedRowError(line_no, "missing comma after video id")
    try:
        check_video_id(video_id)
    except LabValidationError as e:
        raise MalformedRowError(line_no, str(e)) from e

    tokens = rest.split()
    if len(tokens) % 2:
        raise OddTokenCountError(line_no)
    label_tokens = tokens[0::2]
    _check_labels(label_tokens, line_no)
    confs = _parse_confidences(tokens[1::2], line_no)

    labels = [int(t) for t in label_tokens]
    for label in labels:
        if label > MAX_LABEL:
            raise LabelOutOfRangeError(label)
    if len(set(labels)) != len(labels):
        raise DuplicateLabelError(line_no)
    if vocab is not None:
        for label in labels:
            vocab.check_label(label)
    return PredictionList(video_id, tuple(zip(labels, confs)))


CHUNK_LINES = 4096


def _parse_lines(lines: List[str], first_line: int, vocab: Optional[Vocabulary]) -> List[PredictionList]:
    return [parse_row(raw.rstrip("\r\n"), line_no, vocab) for line_no, raw in enumerate(lines, first_line)]


def _parsed_rows(fh: TextIO, vocab: Optional[Vocabulary], threads: int, chunk_lines: int) -> Iterator[PredictionList]:
    if threads <= 1:
        for line_no, raw in enumerate(fh, 2):
            yield parse_row(raw.rstrip("\r\n"), line_no, vocab)
        return

    # chunks are parsed in the pool and handed back in file order, at most 2 * threads in flight
    pending: deque = deque()
    line_no = 2
    with ThreadPoolExecutor(max_workers=threads) as pool:
        while True:
            lines = list(islice(fh, chunk_lines))
            if not lines:
                break
            pending.append(pool.submit(_parse_lines, lines, line_no, vocab))
            line_no += len(lines)
            if len(pending) >= 2 * threads:
                yield from pending.popleft().result()
        while pending:
            yield from pending.popleft().result()


def parse_submission(
    path,
    vocab: Optional[Vocabulary] = None,
    threads: int = 1,
    chunk_lines: int = CHUNK_LINES,
) -> Iterator[PredictionList]:
    """
    Stream the rows of a submission file, in file order.

    Both LF and CRLF line endings are accepted. Any error carries ``path``.
    With ``threads`` above 1, blocks of ``chunk_lines`` rows are parsed by a
    thread pool; rows still come out in file order and errors name the
    same line a sequential parse would.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as e:
        raise DataIOError(f"cannot open {path}: {e}") from e

    with fh:
        try:
            header = fh.readline()
            if header.rstrip("\r\n") != HEADER:
                raise BadHeaderError(header.rstrip("\r\n"))
            seen = set()
            for preds in _parsed_rows(fh, vocab, threads, chunk_lines):
                if preds.video_id in seen:
                    raise DuplicateVideoError(preds.video_id)
                seen.add(preds.video_id)
                yield preds
        except LabError as e:
            if e.path is None:
                e.attribute_to(path)
            raise
        except UnicodeDecodeError as e:
            raise MalformedRowError(0, f"not UTF-8: {e}").attribute_to(path) from e
        except OSError as e:
            raise DataIOError(f"read error in {path}: {e}") from e
