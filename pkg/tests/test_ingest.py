import struct

import numpy as np
import pytest

from yt8m_lab.errors import (
    BadFormatError,
    CrcMismatchError,
    DataIOError,
    LabelOutOfRangeError,
    LabIOError,
    MissingFeatureError,
    TruncatedRecordError,
    WrongTypeError,
)
from yt8m_lab.models.datamodel import Vocabulary
from yt8m_lab.models.specs import SyntheticConfig
from yt8m_lab.services import tfrecord
from yt8m_lab.services.ingest import (
    DatasetHandle,
    generate_synthetic,
    iter_native,
    load_dataset,
    select_features,
    write_dataset,
)
from yt8m_lab.services.tfrecord import (
    crc32c,
    decode_video_example,
    encode_video_example,
    mask_crc,
    masked_crc32c,
    read_tfrecord_stream,
    write_tfrecord_stream,
)


def _reference_crc32c(data: bytes) -> int:
    """Bitwise CRC-32C, independent of the table-driven implementation."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0x82F63B78 & -(crc & 1))
    return crc ^ 0xFFFFFFFF


class TestCrc32c:

    @pytest.mark.parametrize("data, expected", [
        (b"123456789", 0xE3069283),
        (bytes(32), 0x8A9136AA),
        (b"\xff" * 32, 0x62A8AB43),
        (bytes(range(32)), 0x46DD794E),
        (b"", 0x0),
    ])
    def test_known_answers(self, data, expected):
        assert crc32c(data) == expected

    def test_matches_bitwise_reference(self, rng):
        for size in (1, 7, 64, 300):
            data = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()
            assert crc32c(data) == _reference_crc32c(data)

    def test_mask(self):
        crc = 0xE3069283
        expected = ((((crc >> 15) | (crc << 17)) & 0xFFFFFFFF) + 0xA282EAD8) & 0xFFFFFFFF
        assert mask_crc(crc) == expected
        assert masked_crc32c(b"123456789") == expected


class TestTfRecordStream:

    def test_round_trip_random_payloads(self, tmp_path, rng):
        payloads = [rng.integers(0, 256, size=n, dtype=np.uint8).tobytes() for n in (0, 1, 17, 1000)]
        path = tmp_path / "data.tfrecord"
        assert write_tfrecord_stream(path, payloads) == 4
        assert list(read_tfrecord_stream(path)) == payloads

    def test_every_single_bit_flip_is_detected(self, tmp_path):
        path = tmp_path / "data.tfrecord"
        write_tfrecord_stream(path, [b"video-level payload"])
        blob = path.read_bytes()
        for byte in range(len(blob)):
            for bit in range(8):
                corrupted = bytearray(blob)
                corrupted[byte] ^= 1 << bit
                path.write_bytes(bytes(corrupted))
                # length bits are caught by the length CRC before any payload read
                with pytest.raises(CrcMismatchError) as info:
                    list(read_tfrecord_stream(path))
                assert info.value.offset == 0
                assert isinstance(info.value, LabIOError)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "data.tfrecord"
        write_tfrecord_stream(path, [b"abc", b"defgh"])
        blob = path.read_bytes()
        path.write_bytes(blob[:-2])
        records = read_tfrecord_stream(path)
        assert next(records) == b"abc"
        with pytest.raises(TruncatedRecordError) as info:
            next(records)
        assert info.value.offset == 12 + 3 + 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            list(read_tfrecord_stream(tmp_path / "missing.tfrecord"))


def _payload(**features):
    """A tf.Example for one 8+4 dim video; keyword arguments replace serialized features."""
    defaults = {
        "labels": tfrecord._int64_feature([1]),
        "mean_audio": tfrecord._float_feature(np.zeros(4)),
        "mean_rgb": tfrecord._float_feature(np.zeros(8)),
        "video_id": tfrecord._bytes_feature([b"v1"]),
    }
    defaults.update(features)
    entries = b"".join(
        tfrecord._len_field(1, tfrecord._len_field(1, key.encode()) + tfrecord._len_field(2, value))
        for key, value in defaults.items()
    )
    return tfrecord._len_field(1, entries)


class TestVideoExampleCodec:

    def test_round_trip(self, make_example, vocab):
        ex = make_example(labels=(0, 3))
        decoded = decode_video_example(encode_video_example(ex), vocab, 8, 4)
        assert decoded == ex

    def test_missing_feature(self, vocab):
        with pytest.raises(MissingFeatureError) as info:
            decode_video_example(b"", vocab, 8, 4)
        assert info.value.name == "video_id"

    def test_wrong_type(self, vocab):
        with pytest.raises(WrongTypeError) as info:
            decode_video_example(_payload(labels=tfrecord._float_feature(np.array([1.0]))), vocab, 8, 4)
        assert info.value.name == "labels"

    def test_label_out_of_range(self, make_example):
        payload = encode_video_example(make_example(labels=(7,)))
        with pytest.raises(LabelOutOfRangeError):
            decode_video_example(payload, Vocabulary(5), 8, 4)

    def test_garbage_payload(self, vocab):
        with pytest.raises(BadFormatError):
            decode_video_example(b"\x0f\x00", vocab, 8, 4)

    def test_group_wire_type_inside_a_feature(self, vocab):
        with pytest.raises(WrongTypeError) as info:
            decode_video_example(_payload(labels=b"\x1b"), vocab, 8, 4)
        assert info.value.name == "labels"

    def test_group_wire_type_inside_a_value_list(self, vocab):
        with pytest.raises(WrongTypeError) as info:
            decode_video_example(_payload(mean_rgb=tfrecord._len_field(2, b"\x0b")), vocab, 8, 4)
        assert info.value.name == "mean_rgb"

    def test_duplicate_labels_rejected(self, vocab):
        with pytest.raises(BadFormatError, match=r"duplicate labels \[2\]"):
            decode_video_example(_payload(labels=tfrecord._int64_feature([2, 0, 2])), vocab, 8, 4)


class TestSynthetic:

    def test_deterministic(self, small_config):
        a = generate_synthetic(small_config).examples()
        b = generate_synthetic(small_config).examples()
        assert a == b

    def test_every_video_has_a_label(self, small_dataset):
        assert all(ex.labels for ex in small_dataset)

    def test_splits_differ_but_share_shape(self, small_config):
        a = generate_synthetic(small_config)
        b = generate_synthetic(small_config.model_copy(update={"split": 1}))
        ids_a = {ex.video_id for ex in a}
        ids_b = {ex.video_id for ex in b}
        assert not ids_a & ids_b
        assert a.examples()[0].features != b.examples()[0].features

    def test_default_geometry(self):
        cfg = SyntheticConfig(num_videos=300, seed=5)
        assert (cfg.rgb_dim, cfg.audio_dim) == (1024, 128)
        ds = generate_synthetic(cfg)
        assert (ds.rgb_dim, ds.audio_dim) == (1024, 128)
        ids, X, Y = ds.to_arrays()
        assert X.shape == (300, 1152) and Y.shape == (300, cfg.num_classes)
        assert len(set(ids)) == 300
        assert np.isfinite(X).all()
        assert Y.sum(axis=1).min() >= 1
        ex = ds.examples()[0]
        assert ex.features.rgb.shape == (1024,) and ex.features.audio.shape == (128,)
        assert generate_synthetic(cfg).examples() == ds.examples()

    @pytest.mark.parametrize("fmt", ["native", "tfrecord"])
    def test_default_geometry_files(self, tmp_path, fmt):
        ds = generate_synthetic(SyntheticConfig(num_videos=20, seed=5))
        path = tmp_path / f"data.{fmt}"
        write_dataset(ds, path, fmt)
        assert load_dataset(path, ds.vocab, 1024, 128).examples() == ds.examples()

    def test_empty(self):
        ds = generate_synthetic(SyntheticConfig(num_videos=0, num_classes=3, rgb_dim=2, audio_dim=1))
        assert len(ds) == 0
        ids, X, Y = ds.to_arrays()
        assert X.shape == (0, 3) and Y.shape == (0, 3)


class TestDatasetFiles:

    @pytest.mark.parametrize("fmt", ["native", "tfrecord"])
    def test_write_then_load(self, tmp_path, small_dataset, fmt):
        path = tmp_path / f"data.{fmt}"
        assert write_dataset(small_dataset, path, fmt) == 64
        loaded = load_dataset(path, small_dataset.vocab, 8, 4)
        assert loaded.examples() == small_dataset.examples()

    def test_native_header_carries_geometry(self, tmp_path, small_dataset):
        path = tmp_path / "data.yt8v"
        write_dataset(small_dataset, path, "native")
        loaded = load_dataset(path)
        assert (loaded.vocab.num_classes, loaded.rgb_dim, loaded.audio_dim) == (5, 8, 4)

    def test_native_truncation(self, tmp_path, small_dataset):
        path = tmp_path / "data.yt8v"
        write_dataset(small_dataset, path, "native")
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(TruncatedRecordError):
            list(iter_native(path))

    def test_native_duplicate_labels(self, tmp_path, make_example, vocab):
        path = tmp_path / "data.yt8v"
        write_dataset(DatasetHandle.from_examples([make_example(labels=(0, 3))], vocab, 8, 4), path, "native")
        raw = path.read_bytes()
        labels = struct.pack("<H2I", 2, 0, 3)
        assert raw.count(labels) == 1
        path.write_bytes(raw.replace(labels, struct.pack("<H2I", 2, 0, 0)))
        with pytest.raises(BadFormatError, match="duplicate labels"):
            list(iter_native(path))

    def test_native_bad_magic(self, tmp_path):
        path = tmp_path / "bad.yt8v"
        path.write_bytes(b"YT8V" + bytes([9]) + struct.pack("<III", 1, 1, 1))
        with pytest.raises(BadFormatError):
            list(load_dataset(path))


class TestFeatureSelection:

    def test_slices(self, small_dataset):
        _, X, _ = small_dataset.to_arrays()
        np.testing.assert_array_equal(select_features(X, "rgb", 8), X[:, :8])
        np.testing.assert_array_equal(select_features(X, "audio", 8), X[:, 8:])
        assert select_features(X, "all", 8) is X

    def test_from_examples_length(self, make_example, vocab):
        ds = DatasetHandle.from_examples([make_example("a"), make_example("b")], vocab, 8, 4)
        assert len(ds) == 2
        assert ds.ground_truth() == {"a": frozenset({0}), "b": frozenset({0})}
