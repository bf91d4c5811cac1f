"""Finite-difference gradient checking shared by the engine and zoo tests."""

from typing import List

import numpy as np

from yt8m_lab.nn.graph import ModelGraph
from yt8m_lab.nn.layers import ReLU

STEP = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(1e-5, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def _graphs(model) -> List[ModelGraph]:
    if isinstance(model, ModelGraph):
        return [model]
    graphs = list(model.members)
    if getattr(model, "meta", None) is not None:
        graphs.append(model.meta)
    return graphs


def relu_pattern(model) -> np.ndarray:
    """Signs of every ReLU pre-activation of the last forward pass, flattened."""
    parts = [
        (graph.activation(node.inputs[0]) > 0).reshape(-1)
        for graph in _graphs(model)
        for node in graph.nodes
        if isinstance(node, ReLU)
    ]
    return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)


def gradient_check(model, X: np.ndarray, seed: int = 0, samples: int = 20, step: float = STEP) -> float:
    """
    Max relative error between backprop and central differences.

    The objective is ``sum(output * R) + regularization`` for a fixed random
    ``R``. The model runs in train mode; dropout masks drawn by the first
    forward pass are replayed for every perturbed pass. Up to ``samples``
    entries of every trainable tensor are checked.

    An entry whose +/- step moves any ReLU input across zero is skipped: the
    difference quotient there straddles a kink and measures neither one-sided
    derivative. Candidates are drawn until ``samples`` entries qualify.
    """
    rng = np.random.default_rng(seed)
    out = model.forward(X, "train")
    R = rng.standard_normal(out.shape)
    grads = model.backward(R)
    baseline = relu_pattern(model)

    def objective():
        y = model.forward(X, "train", reuse_masks=True)
        value = float(np.sum(y * R) + model.regularization_loss())
        return value, np.array_equal(relu_pattern(model), baseline)

    params = model.parameters()
    worst = 0.0
    for key in model.trainable_keys():
        flat = params[key].reshape(-1)
        wanted = min(samples, flat.size)
        picks, numeric = [], []
        for idx in rng.permutation(flat.size)[:wanted * 10]:
            original = flat[idx]
            flat[idx] = original + step
            plus, plus_smooth = objective()
            flat[idx] = original - step
            minus, minus_smooth = objective()
            flat[idx] = original
            if not (plus_smooth and minus_smooth):
                continue
            picks.append(idx)
            numeric.append((plus - minus) / (2.0 * step))
            if len(picks) == wanted:
                break
        assert picks, f"every sampled entry of {key} sits on a ReLU kink"
        analytic = grads[key].reshape(-1)[np.asarray(picks)]
        worst = max(worst, relative_error(analytic, np.asarray(numeric)))
    return worst
