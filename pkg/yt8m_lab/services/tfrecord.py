"""
TFRecord container framing and the tf.Example subset used by video-level data.

Record framing: u64 LE payload length, u32 LE masked CRC32C of the length
bytes, payload, u32 LE masked CRC32C of the payload.
"""

from typing import Dict, Iterable, Iterator, List, Optional, Tuple
import logging
import struct

import numpy as np

from yt8m_lab.errors import (
    BadFormatError,
    CrcMismatchError,
    DataIOError,
    MissingFeatureError,
    TruncatedRecordError,
    WrongTypeError,
)
from yt8m_lab.models.datamodel import (
    DEFAULT_AUDIO_DIM,
    DEFAULT_RGB_DIM,
    Example,
    FeatureVector,
    Vocabulary,
    validate_example,
)

logger = logging.getLogger(__name__)

_CASTAGNOLI = 0x82F63B78
_MASK_DELTA = 0xA282EAD8
_U32 = 0xFFFFFFFF


def _make_table() -> Tuple[int, ...]:
    table = []
    for n in range(256):
        crc = n
        for _ in range(8):
            crc = (crc >> 1) ^ _CASTAGNOLI if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_TABLE = _make_table()


def crc32c(data: bytes) -> int:
    """CRC-32C (Castagnoli), reflected, init and final xor 0xFFFFFFFF."""
    crc = _U32
    table = _TABLE
    for byte in bytes(data):
        crc = table[(crc ^ byte) & 0xFF] ^ (crc >> 8)
    return crc ^ _U32


def mask_crc(crc: int) -> int:
    return ((((crc >> 15) | (crc << 17)) & _U32) + _MASK_DELTA) & _U32


def masked_crc32c(data: bytes) -> int:
    return mask_crc(crc32c(data))


def frame_record(payload: bytes) -> bytes:
    length = struct.pack("<Q", len(payload))
    return b"".join([
        length,
        struct.pack("<I", masked_crc32c(length)),
        payload,
        struct.pack("<I", masked_crc32c(payload)),
    ])


def write_tfrecord_stream(path, payloads: Iterable[bytes]) -> int:
    """
    Write payloads as TFRecords.

    Returns:
        Number of records written.
    """
    count = 0
    try:
        with open(path, "wb") as fh:
            for payload in payloads:
                fh.write(frame_record(bytes(payload)))
                count += 1
    except OSError as e:
        logger.error(f"Error writing TFRecord file {path}: {e}")
        raise DataIOError(f"cannot write {path}: {e}") from e
    return count


def read_tfrecord_stream(path) -> Iterator[bytes]:
    """Yield each record payload after checking both masked CRCs."""
    try:
        fh = open(path, "rb")
    except OSError as e:
        raise DataIOError(f"cannot open {path}: {e}") from e

    with fh:
        offset = 0
        while True:
            try:
                header = fh.read(12)
            except OSError as e:
                raise DataIOError(f"read error in {path} at byte {offset}: {e}") from e
            if not header:
                return
            if len(header) < 12:
                raise TruncatedRecordError(offset)
            length_bytes = header[:8]
            (length_crc,) = struct.unpack("<I", header[8:])
            if masked_crc32c(length_bytes) != length_crc:
                raise CrcMismatchError(offset)
            (length,) = struct.unpack("<Q", length_bytes)
            body = fh.read(length + 4)
            if len(body) < length + 4:
                raise TruncatedRecordError(offset)
            payload = body[:length]
            (payload_crc,) = struct.unpack("<I", body[length:])
            if masked_crc32c(payload) != payload_crc:
                raise CrcMismatchError(offset)
            yield payload
            offset += 12 + length + 4


# protobuf wire format

_VARINT, _FIXED64, _LEN, _FIXED32 = 0, 1, 2, 5


def _encode_varint(value: int) -> bytes:
    value &= (1 << 64) - 1
    out = bytearray()
    while True:
        bits = value & 0x7F
        value >>= 7
        if value:
            out.append(bits | 0x80)
        else:
            out.append(bits)
            return bytes(out)


def _decode_varint(buf: memoryview, pos: int) -> Tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf) or shift > 63:
            raise BadFormatError("malformed varint in tf.Example payload")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def _iter_fields(buf, feature: Optional[str] = None) -> Iterator[Tuple[int, int, object]]:
    """
    (field, wire, value) triples of a protobuf message.

    Inside a named ``feature`` an unsupported wire type is that feature's
    type error rather than a framing error.
    """
    buf = memoryview(buf)
    pos = 0
    while pos < len(buf):
        key, pos = _decode_varint(buf, pos)
        field, wire = key >> 3, key & 7
        if wire == _VARINT:
            value, pos = _decode_varint(buf, pos)
        elif wire == _LEN:
            size, pos = _decode_varint(buf, pos)
            if pos + size > len(buf):
                raise BadFormatError("length-delimited field overruns tf.Example payload")
            value = buf[pos:pos + size]
            pos += size
        elif wire == _FIXED32:
            value = buf[pos:pos + 4]
            pos += 4
        elif wire == _FIXED64:
            value = buf[pos:pos + 8]
            pos += 8
        elif feature is not None:
            raise WrongTypeError(feature)
        else:
            raise BadFormatError(f"unsupported wire type {wire} in tf.Example payload")
        if pos > len(buf):
            raise BadFormatError("truncated field in tf.Example payload")
        yield field, wire, value


def _len_field(field: int, payload: bytes) -> bytes:
    return _encode_varint((field << 3) | _LEN) + _encode_varint(len(payload)) + payload


# Feature oneof numbers
_BYTES_LIST, _FLOAT_LIST, _INT64_LIST = 1, 2, 3


def _feature(kind: int, values_payload: bytes) -> bytes:
    return _len_field(kind, _len_field(1, values_payload) if values_payload else b"")


def _bytes_feature(values: List[bytes]) -> bytes:
    return _len_field(_BYTES_LIST, b"".join(_len_field(1, v) for v in values))


def _int64_feature(values: Iterable[int]) -> bytes:
    packed = b"".join(_encode_varint(v) for v in values)
    return _feature(_INT64_LIST, packed)


def _float_feature(values: np.ndarray) -> bytes:
    return _feature(_FLOAT_LIST, np.asarray(values, dtype="<f4").tobytes())


def encode_video_example(ex: Example) -> bytes:
    """Serialize an Example as a tf.Example with video_id, labels, mean_rgb, mean_audio."""
    features = {
        "labels": _int64_feature(sorted(ex.labels)),
        "mean_audio": _float_feature(ex.features.audio),
        "mean_rgb": _float_feature(ex.features.rgb),
        "video_id": _bytes_feature([ex.video_id.encode("utf-8")]),
    }
    entries = b"".join(
        _len_field(1, _len_field(1, key.encode("utf-8")) + _len_field(2, value))
        for key, value in sorted(features.items())
    )
    return _len_field(1, entries)


_WANTED = {"video_id": _BYTES_LIST, "labels": _INT64_LIST, "mean_rgb": _FLOAT_LIST, "mean_audio": _FLOAT_LIST}


def _collect_features(payload: bytes) -> Dict[str, memoryview]:
    found: Dict[str, memoryview] = {}
    for field, wire, features in _iter_fields(payload):
        if field != 1 or wire != _LEN:
            continue
        for efield, ewire, entry in _iter_fields(features):
            if efield != 1 or ewire != _LEN:
                continue
            key = None
            value = memoryview(b"")
            for kfield, kwire, kvalue in _iter_fields(entry):
                if kfield == 1 and kwire == _LEN:
                    key = bytes(kvalue).decode("utf-8", errors="replace")
                elif kfield == 2 and kwire == _LEN:
                    value = kvalue
            if key in _WANTED:
                found[key] = value
    return found


def _feature_values(name: str, feature: memoryview) -> List[Tuple[int, object]]:
    """(wire, value) items of the value list of ``feature``, checking its oneof kind."""
    items: List[Tuple[int, object]] = []
    kind_seen = False
    for kind, wire, values in _iter_fields(feature, name):
        if kind != _WANTED[name] or wire != _LEN:
            raise WrongTypeError(name)
        kind_seen = True
        for vfield, vwire, value in _iter_fields(values, name):
            if vfield == 1:
                items.append((vwire, value))
    if not kind_seen:
        raise WrongTypeError(name)
    return items


def _to_int64(value: int) -> int:
    return value - (1 << 64) if value >= (1 << 63) else value


def _decode_labels(items) -> List[int]:
    labels: List[int] = []
    for wire, value in items:
        if wire == _VARINT:
            labels.append(_to_int64(value))
        elif wire == _LEN:
            pos = 0
            while pos < len(value):
                v, pos = _decode_varint(value, pos)
                labels.append(_to_int64(v))
        else:
            raise WrongTypeError("labels")
    return labels


def _decode_floats(name: str, items) -> np.ndarray:
    chunks = []
    for wire, value in items:
        if wire not in (_LEN, _FIXED32) or len(value) % 4:
            raise WrongTypeError(name)
        chunks.append(np.frombuffer(bytes(value), dtype="<f4"))
    if not chunks:
        return np.zeros((0,), dtype=np.float32)
    return np.concatenate(chunks).astype(np.float32)


def decode_video_example(
    payload: bytes,
    vocab: Vocabulary,
    rgb_dim: int = DEFAULT_RGB_DIM,
    audio_dim: int = DEFAULT_AUDIO_DIM,
) -> Example:
    """
    Parse a serialized tf.Example into a validated Example.

    Unknown feature keys are ignored.
    """
    found = _collect_features(payload)
    for name in ("video_id", "labels", "mean_rgb", "mean_audio"):
        if name not in found:
            raise MissingFeatureError(name)

    ids = _feature_values("video_id", found["video_id"])
    if len(ids) != 1 or ids[0][0] != _LEN:
        raise WrongTypeError("video_id")
    try:
        video_id = bytes(ids[0][1]).decode("utf-8")
    except UnicodeDecodeError as e:
        raise BadFormatError("video_id is not valid UTF-8") from e

    labels = _decode_labels(_feature_values("labels", found["labels"]))
    if len(set(labels)) != len(labels):
        repeated = sorted({label for label in labels if labels.count(label) > 1})
        raise BadFormatError(f"video {video_id!r}: duplicate labels {repeated}")
    for label in labels:
        vocab.check_label(label)

    ex = Example(
        video_id=video_id,
        labels=frozenset(labels),
        features=FeatureVector(
            rgb=_decode_floats("mean_rgb", _feature_values("mean_rgb", found["mean_rgb"])),
            audio=_decode_floats("mean_audio", _feature_values("mean_audio", found["mean_audio"])),
        ),
    )
    return validate_example(ex, vocab, rgb_dim, audio_dim)
