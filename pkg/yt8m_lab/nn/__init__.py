from yt8m_lab.nn.graph import GraphBuilder, ModelGraph, backward, forward, init_params
from yt8m_lab.nn.optim import Adam, Sgd, make_optimizer, step

__all__ = [
    'GraphBuilder',
    'ModelGraph',
    'backward',
    'forward',
    'init_params',
    'Adam',
    'Sgd',
    'make_optimizer',
    'step',
]
