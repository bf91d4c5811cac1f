from yt8m_lab.models.datamodel import (
    FeatureVector,
    Example,
    Vocabulary,
    PredictionList,
    validate_example,
)
from yt8m_lab.models.specs import (
    ArchitectureSpec,
    EnsembleSpec,
    OptimizerConfig,
    RegConfig,
    SyntheticConfig,
    TrainConfig,
)

__all__ = [
    'FeatureVector',
    'Example',
    'Vocabulary',
    'PredictionList',
    'validate_example',
    'ArchitectureSpec',
    'EnsembleSpec',
    'OptimizerConfig',
    'RegConfig',
    'SyntheticConfig',
    'TrainConfig',
]
