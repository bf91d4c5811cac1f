import numpy as np
import pytest

from yt8m_lab.errors import (
    BadDimensionError,
    BadVideoIdError,
    DuplicatePredictionError,
    EmptyVideoIdError,
    LabelOutOfRangeError,
    LabValidationError,
    NonFiniteFeatureError,
)
from yt8m_lab.models.datamodel import (
    Example,
    FeatureVector,
    PredictionList,
    Vocabulary,
    multi_hot,
    validate_example,
)


def _full_example(labels, rgb_len=1024, audio_len=128, video_id="100000001"):
    return Example(video_id, frozenset(labels), FeatureVector(np.zeros(rgb_len), np.ones(audio_len)))


class TestValidateExample:

    def test_minimal_valid_example(self):
        ex = _full_example({0})
        assert validate_example(ex, Vocabulary(4800)) is ex

    def test_label_at_num_classes_is_out_of_range(self):
        with pytest.raises(LabelOutOfRangeError) as info:
            validate_example(_full_example({4800}), Vocabulary(4800))
        assert info.value.index == 4800

    def test_negative_label_is_out_of_range(self):
        with pytest.raises(LabelOutOfRangeError):
            validate_example(_full_example({-1}), Vocabulary(4800))

    def test_off_by_one_feature_length(self):
        with pytest.raises(BadDimensionError) as info:
            validate_example(_full_example({0}, audio_len=127), Vocabulary(4800))
        assert (info.value.expected, info.value.got) == (1152, 1151)

    def test_rgb_audio_split_is_checked(self):
        with pytest.raises(BadDimensionError):
            validate_example(_full_example({0}, rgb_len=1000, audio_len=152), Vocabulary(4800))

    def test_empty_video_id(self):
        with pytest.raises(EmptyVideoIdError):
            validate_example(_full_example({0}, video_id=""), Vocabulary(4800))

    @pytest.mark.parametrize("video_id", ["a,b", "a b", "tab\there"])
    def test_video_id_with_separator(self, video_id):
        with pytest.raises(BadVideoIdError):
            validate_example(_full_example({0}, video_id=video_id), Vocabulary(4800))

    def test_non_finite_features(self):
        rgb = np.zeros(1024)
        rgb[3] = np.nan
        ex = Example("v", frozenset({0}), FeatureVector(rgb, np.zeros(128)))
        with pytest.raises(NonFiniteFeatureError):
            validate_example(ex, Vocabulary(4800))

    def test_empty_label_set_is_valid(self):
        validate_example(_full_example(set()), Vocabulary(4800))

    def test_is_pure(self):
        ex = _full_example({1, 2})
        before = repr(ex)
        validate_example(ex, Vocabulary(4800))
        validate_example(ex, Vocabulary(4800))
        assert repr(ex) == before


class TestVocabulary:

    def test_rejects_zero_classes(self):
        with pytest.raises(LabValidationError):
            Vocabulary(0)

    def test_default_size(self):
        assert Vocabulary().num_classes == 4800


class TestFeatureVector:

    def test_concat_order_and_dtype(self):
        fv = FeatureVector([1.0, 2.0], [3.0])
        np.testing.assert_array_equal(fv.concat(), [1.0, 2.0, 3.0])
        assert fv.concat().dtype == np.float32
        assert fv.dim == 3

    def test_arrays_are_read_only(self):
        fv = FeatureVector([1.0], [2.0])
        with pytest.raises(ValueError):
            fv.rgb[0] = 5.0


class TestPredictionList:

    def test_sorted_by_confidence_then_label(self):
        p = PredictionList("v", ((3, 0.1), (2, 0.5), (1, 0.5), (4, 0.9)))
        assert p.pairs == ((4, 0.9), (1, 0.5), (2, 0.5), (3, 0.1))
        assert p.is_sorted()

    def test_confidences_are_clamped(self):
        p = PredictionList("v", ((1, 1.5), (2, -0.2)))
        assert p.pairs == ((1, 1.0), (2, 0.0))

    def test_duplicate_label_rejected(self):
        with pytest.raises(DuplicatePredictionError):
            PredictionList("v", ((1, 0.5), (1, 0.4)))

    def test_nan_confidence_rejected(self):
        with pytest.raises(LabValidationError):
            PredictionList("v", ((1, float("nan")),))

    def test_truncated(self):
        p = PredictionList("v", tuple((i, 1.0 - i / 10) for i in range(5)))
        assert p.truncated(2).labels == (0, 1)
        assert p.truncated(10) is p

    def test_random_lists_verify_by_resorting(self, rng):
        for _ in range(50):
            labels = rng.choice(100, size=10, replace=False)
            confs = rng.choice([0.1, 0.2, 0.3], size=10)
            p = PredictionList("v", tuple(zip(labels.tolist(), confs.tolist())))
            resorted = tuple(sorted(p.pairs, key=lambda pair: (-pair[1], pair[0])))
            assert p.pairs == resorted


class TestMultiHot:

    def test_rows(self):
        Y = multi_hot([frozenset({0, 2}), frozenset()], 3)
        np.testing.assert_array_equal(Y, [[1, 0, 1], [0, 0, 0]])
