"""First-order optimizers with a constant base learning rate."""

from typing import Dict
import logging

import numpy as np

from yt8m_lab.errors import ShapeMismatchError
from yt8m_lab.models.specs import OptimizerConfig

logger = logging.getLogger(__name__)


class Optimizer:
    """Updates parameter arrays in place from a dict of gradients."""

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.lr = config.base_learning_rate
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        self.t += 1
        for key, g in grads.items():
            w = params[key]
            if w.shape != g.shape:
                raise ShapeMismatchError(f"{key}: parameter {w.shape} vs gradient {g.shape}")
            w -= self._delta(key, g).astype(w.dtype, copy=False)
        return params

    def _delta(self, key: str, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Sgd(Optimizer):
    def _delta(self, key, g):
        return self.lr * g


class Adam(Optimizer):
    """Adam with bias-corrected first and second moments."""

    def __init__(self, config: OptimizerConfig):
        super().__init__(config)
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def _delta(self, key, g):
        cfg = self.config
        m = self.m.get(key)
        if m is None:
            m = self.m[key] = np.zeros_like(g)
            self.v[key] = np.zeros_like(g)
        v = self.v[key]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        m_hat = m / (1.0 - cfg.beta1 ** self.t)
        v_hat = v / (1.0 - cfg.beta2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def make_optimizer(config: OptimizerConfig) -> Optimizer:
    if config.kind == "sgd":
        return Sgd(config)
    return Adam(config)


def step(optimizer: Optimizer, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Apply one update and return the (mutated) parameter dict."""
    return optimizer.step(params, grads)
