"""Shared fixtures: small synthetic datasets and deterministic generators."""

import numpy as np
import pytest

from yt8m_lab.models.datamodel import Example, FeatureVector, Vocabulary
from yt8m_lab.models.specs import SyntheticConfig
from yt8m_lab.services.ingest import DatasetHandle, generate_synthetic

SMALL_RGB = 8
SMALL_AUDIO = 4
SMALL_CLASSES = 5


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def vocab():
    return Vocabulary(SMALL_CLASSES)


@pytest.fixture
def small_config():
    return SyntheticConfig(
        num_videos=64,
        num_classes=SMALL_CLASSES,
        rgb_dim=SMALL_RGB,
        audio_dim=SMALL_AUDIO,
        seed=7,
    )


@pytest.fixture
def small_dataset(small_config) -> DatasetHandle:
    return generate_synthetic(small_config)


@pytest.fixture
def make_example():
    def _make(video_id="vid1", labels=(0,), rgb_dim=SMALL_RGB, audio_dim=SMALL_AUDIO, fill=0.25):
        return Example(
            video_id=video_id,
            labels=frozenset(labels),
            features=FeatureVector(np.full(rgb_dim, fill), np.full(audio_dim, -fill)),
        )
    return _make
