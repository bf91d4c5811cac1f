"""Exception hierarchy shared by every service."""

from typing import Optional


class LabError(Exception):
    """Root of all lab errors. ``exit_code`` is what the CLI returns."""

    exit_code = 1
    module = "lab"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message
        self.path: Optional[str] = None

    def attribute_to(self, path: str) -> "LabError":
        """Attach the file that produced this error."""
        self.path = str(path)
        self.message = f"{self.path}: {self.message}"
        self.args = (self.message,)
        return self

    def __str__(self) -> str:
        return self.message


class LabValidationError(LabError):
    exit_code = 1


class LabIOError(LabError):
    exit_code = 2


class UsageError(LabValidationError):
    module = "cli"


class UnwritablePathError(LabIOError):
    module = "cli"

    def __init__(self, path: str, reason: str):
        super().__init__(f"cannot write {path}: {reason}")
        self.path = str(path)


# datamodel

class LabelOutOfRangeError(LabValidationError):
    module = "datamodel"

    def __init__(self, index: int, num_classes: Optional[int] = None):
        detail = f" (num_classes={num_classes})" if num_classes is not None else ""
        super().__init__(f"label index {index} out of range{detail}")
        self.index = index


class BadDimensionError(LabValidationError):
    module = "datamodel"

    def __init__(self, expected: int, got: int, what: str = "features"):
        super().__init__(f"bad {what} dimension: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class EmptyVideoIdError(LabValidationError):
    module = "datamodel"

    def __init__(self):
        super().__init__("empty video id")


class BadVideoIdError(LabValidationError):
    module = "datamodel"

    def __init__(self, video_id: str):
        super().__init__(f"video id {video_id!r} contains a comma or whitespace")
        self.video_id = video_id


class NonFiniteFeatureError(LabValidationError):
    module = "datamodel"

    def __init__(self, video_id: str):
        super().__init__(f"video {video_id!r} has non-finite feature values")
        self.video_id = video_id


# ingest

class CrcMismatchError(LabIOError):
    module = "ingest"

    def __init__(self, offset: int):
        super().__init__(f"CRC mismatch in record at byte offset {offset}")
        self.offset = offset


class TruncatedRecordError(LabIOError):
    module = "ingest"

    def __init__(self, offset: int):
        super().__init__(f"truncated record at byte offset {offset}")
        self.offset = offset


class DataIOError(LabIOError):
    module = "ingest"


class MissingFeatureError(LabValidationError):
    module = "ingest"

    def __init__(self, name: str):
        super().__init__(f"missing feature {name!r}")
        self.name = name


class WrongTypeError(LabValidationError):
    module = "ingest"

    def __init__(self, name: str):
        super().__init__(f"feature {name!r} has the wrong type")
        self.name = name


class BadFormatError(LabValidationError):
    module = "ingest"


class InvalidConfigError(LabValidationError):
    module = "config"


# nncore

class ShapeMismatchError(LabValidationError):
    module = "nncore"


class NonFiniteValueError(LabValidationError):
    module = "nncore"

    def __init__(self, node_id: str):
        super().__init__(f"non-finite value produced by node {node_id!r}")
        self.node_id = node_id


class NoCachedForwardError(LabValidationError):
    module = "nncore"

    def __init__(self):
        super().__init__("backward called without a cached forward pass")


class CheckpointError(LabIOError):
    module = "nncore"


# modelzoo

class UnknownArchitectureError(LabValidationError):
    module = "modelzoo"

    def __init__(self, name: str):
        super().__init__(f"unknown architecture {name!r}")
        self.name = name


class BadSpecError(LabValidationError):
    module = "modelzoo"


# training

class EmptyLabelRowError(LabValidationError):
    module = "training"

    def __init__(self, row: int):
        super().__init__(f"softmax cross-entropy target row {row} has no positive label")
        self.row = row


class EmptyDatasetError(LabValidationError):
    module = "training"

    def __init__(self):
        super().__init__("training dataset is empty")


class NonFiniteLossError(LabValidationError):
    module = "training"

    def __init__(self, step: int, report=None):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.report = report


# metrics

class UnknownVideoError(LabValidationError):
    module = "metrics"

    def __init__(self, video_id: str):
        super().__init__(f"prediction for unknown video {video_id!r}")
        self.video_id = video_id


class DuplicatePredictionError(LabValidationError):
    module = "metrics"

    def __init__(self, video_id: str, label: int):
        super().__init__(f"duplicate prediction for video {video_id!r} label {label}")
        self.video_id = video_id
        self.label = label


# submission

class BadHeaderError(LabValidationError):
    module = "submission"

    def __init__(self, got: str):
        super().__init__(f"bad submission header {got!r}")
        self.got = got


class OddTokenCountError(LabValidationError):
    module = "submission"

    def __init__(self, line: int):
        super().__init__(f"line {line}: odd number of label/confidence tokens")
        self.line = line


class BadNumberError(LabValidationError):
    module = "submission"

    def __init__(self, line: int, token: str):
        super().__init__(f"line {line}: bad number {token!r}")
        self.line = line
        self.token = token


class DuplicateLabelError(LabValidationError):
    module = "submission"

    def __init__(self, line: int):
        super().__init__(f"line {line}: duplicate label")
        self.line = line


class DuplicateVideoError(LabValidationError):
    module = "submission"

    def __init__(self, video_id: str):
        super().__init__(f"duplicate video {video_id!r}")
        self.video_id = video_id


class MalformedRowError(LabValidationError):
    module = "submission"

    def __init__(self, line: int, detail: str):
        super().__init__(f"line {line}: {detail}")
        self.line = line
