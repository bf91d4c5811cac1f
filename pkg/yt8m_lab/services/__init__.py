from yt8m_lab.services.ingest import DatasetHandle, generate_synthetic, load_dataset, write_dataset
from yt8m_lab.services.modelzoo import build
from yt8m_lab.services.training import TrainReport, train
from yt8m_lab.services.metrics import GapAccumulator, gap_at_k, gap_oracle, top_k
from yt8m_lab.services.submission import parse_submission, write_submission
from yt8m_lab.services.ensemble import AverageEnsemble, StackedEnsemble, average_files, average_models, stack_models
from yt8m_lab.services.bench import BenchResult, bench_eval

__all__ = [
    'DatasetHandle',
    'generate_synthetic',
    'load_dataset',
    'write_dataset',
    'build',
    'TrainReport',
    'train',
    'GapAccumulator',
    'gap_at_k',
    'gap_oracle',
    'top_k',
    'parse_submission',
    'write_submission',
    'AverageEnsemble',
    'StackedEnsemble',
    'average_files',
    'average_models',
    'stack_models',
    'BenchResult',
    'bench_eval',
]
