"""
Layer nodes of the dense-network engine.

Every node maps a list of upstream activations to one output and knows how to
push a gradient back through itself. Activations are batch-major numpy arrays:
``(batch, features)`` everywhere except between ``conv1x1`` and ``flatten``,
where they are ``(batch, features, channels)``.
"""

from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from yt8m_lab.errors import ShapeMismatchError

Shape = Tuple[int, ...]
Grads = Dict[str, np.ndarray]


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows and gives exactly 0.5 at 0
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class LayerNode(ABC):
    """A node of a ModelGraph."""

    kind: str = ""
    tag: int = -1

    def __init__(self, name: str, inputs: Sequence[str]):
        self.name = name
        self.inputs = tuple(inputs)
        self.params: Dict[str, np.ndarray] = {}
        self.trainable = True
        self.rng: Optional[np.random.Generator] = None

    @property
    def regularized_params(self) -> Tuple[str, ...]:
        return ()

    @abstractmethod
    def output_shape(self, in_shapes: List[Shape]) -> Shape:
        """Feature shape (without batch) produced from the given input shapes."""

    @abstractmethod
    def forward(self, xs: List[np.ndarray], train: bool, prev_cache: Any = None) -> Tuple[np.ndarray, Any]:
        """
        Returns:
            ``(output, cache)``; the cache is handed back to ``backward``.
        """

    @abstractmethod
    def backward(self, grad: np.ndarray, xs: List[np.ndarray], out: np.ndarray, cache: Any) -> Tuple[List[np.ndarray], Grads]:
        """
        Returns:
            Gradients with respect to each input, and to each trainable parameter.
        """

    def init_params(self, rng: np.random.Generator, dtype) -> None:
        pass

    def param_shapes(self) -> List[Tuple[str, Shape]]:
        return [(k, v.shape) for k, v in self.params.items()]


class InputNode(LayerNode):
    kind = "input"
    tag = 0

    def __init__(self, name: str, dim: int):
        super().__init__(name, ())
        self.dim = dim

    def output_shape(self, in_shapes):
        return (self.dim,)

    def forward(self, xs, train, prev_cache=None):
        return xs[0], None

    def backward(self, grad, xs, out, cache):
        return [grad], {}


class Dense(LayerNode):
    kind = "dense"
    tag = 1

    def __init__(self, name: str, src: str, in_dim: int, out_dim: int, bias: bool = True):
        super().__init__(name, (src,))
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.has_bias = bias
        self.params["weight"] = np.zeros((in_dim, out_dim))
        if bias:
            self.params["bias"] = np.zeros((out_dim,))

    @property
    def regularized_params(self):
        return ("weight",)

    def output_shape(self, in_shapes):
        if in_shapes[0] != (self.in_dim,):
            raise ShapeMismatchError(f"{self.name}: expected input ({self.in_dim},), got {in_shapes[0]}")
        return (self.out_dim,)

    def init_params(self, rng, dtype):
        bound = glorot_bound(self.in_dim, self.out_dim)
        self.params["weight"] = rng.uniform(-bound, bound, size=(self.in_dim, self.out_dim)).astype(dtype)
        if self.has_bias:
            self.params["bias"] = np.zeros((self.out_dim,), dtype=dtype)

    def forward(self, xs, train, prev_cache=None):
        out = xs[0] @ self.params["weight"]
        if self.has_bias:
            out = out + self.params["bias"]
        return out, None

    def backward(self, grad, xs, out, cache):
        grads = {"weight": xs[0].T @ grad}
        if self.has_bias:
            grads["bias"] = grad.sum(axis=0)
        return [grad @ self.params["weight"].T], grads


class Projection(LayerNode):
    """
    Bias-free linear map used for skip connections and input projections.

    ``init`` is one of ``glorot``, ``normal`` (std ``init_std``) or
    ``identity``. A fixed projection has no trainable parameters.
    """

    kind = "projection"
    tag = 11

    def __init__(
        self,
        name: str,
        src: str,
        in_dim: int,
        out_dim: int,
        init: str = "glorot",
        trainable: bool = True,
        init_std: float = 0.01,
    ):
        super().__init__(name, (src,))
        if init == "identity" and in_dim != out_dim:
            raise ShapeMismatchError(f"{name}: identity projection needs equal dims, got {in_dim}->{out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.init = init
        self.init_std = init_std
        self.trainable = trainable
        self.params["weight"] = np.zeros((in_dim, out_dim))

    @property
    def regularized_params(self):
        return ("weight",) if self.trainable else ()

    def output_shape(self, in_shapes):
        if in_shapes[0] != (self.in_dim,):
            raise ShapeMismatchError(f"{self.name}: expected input ({self.in_dim},), got {in_shapes[0]}")
        return (self.out_dim,)

    def init_params(self, rng, dtype):
        if self.init == "identity":
            weight = np.eye(self.in_dim)
        elif self.init == "normal":
            weight = rng.normal(0.0, self.init_std, size=(self.in_dim, self.out_dim))
        else:
            bound = glorot_bound(self.in_dim, self.out_dim)
            weight = rng.uniform(-bound, bound, size=(self.in_dim, self.out_dim))
        self.params["weight"] = weight.astype(dtype)

    def forward(self, xs, train, prev_cache=None):
        return xs[0] @ self.params["weight"], None

    def backward(self, grad, xs, out, cache):
        dx = grad @ self.params["weight"].T
        if not self.trainable:
            return [dx], {}
        return [dx], {"weight": xs[0].T @ grad}


class _Elementwise(LayerNode):
    def __init__(self, name: str, src: str):
        super().__init__(name, (src,))

    def output_shape(self, in_shapes):
        return in_shapes[0]


class ReLU(_Elementwise):
    kind = "relu"
    tag = 2

    def forward(self, xs, train, prev_cache=None):
        return np.maximum(xs[0], 0.0), None

    def backward(self, grad, xs, out, cache):
        return [grad * (xs[0] > 0)], {}


class Sigmoid(_Elementwise):
    kind = "sigmoid"
    tag = 3

    def forward(self, xs, train, prev_cache=None):
        return sigmoid(xs[0]), None

    def backward(self, grad, xs, out, cache):
        return [grad * out * (1.0 - out)], {}


class Softmax(_Elementwise):
    """Softmax over the feature axis of each row."""

    kind = "softmax"
    tag = 4

    def forward(self, xs, train, prev_cache=None):
        z = xs[0] - xs[0].max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True), None

    def backward(self, grad, xs, out, cache):
        inner = (grad * out).sum(axis=-1, keepdims=True)
        return [out * (grad - inner)], {}


class GroupedSoftmax(_Elementwise):
    """Softmax over consecutive groups of ``group_size`` features."""

    kind = "grouped_softmax"
    tag = 12

    def __init__(self, name: str, src: str, group_size: int):
        super().__init__(name, src)
        self.group_size = group_size

    def output_shape(self, in_shapes):
        if in_shapes[0][0] % self.group_size:
            raise ShapeMismatchError(f"{self.name}: width {in_shapes[0][0]} not divisible by {self.group_size}")
        return in_shapes[0]

    def forward(self, xs, train, prev_cache=None):
        x = xs[0]
        z = x.reshape(x.shape[0], -1, self.group_size)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return (e / e.sum(axis=-1, keepdims=True)).reshape(x.shape), None

    def backward(self, grad, xs, out, cache):
        b = grad.shape[0]
        g = grad.reshape(b, -1, self.group_size)
        s = out.reshape(b, -1, self.group_size)
        inner = (g * s).sum(axis=-1, keepdims=True)
        return [(s * (g - inner)).reshape(grad.shape)], {}


class MixtureCombine(LayerNode):
    """
    Per-class mixture: score_c = sum_m gate[c, m] * expert[c, m].

    Gates arrive as ``(batch, C * (M + 1))`` probabilities; the last gate of
    every class routes to an implicit expert that always predicts 0. Experts
    arrive as ``(batch, C * M)`` probabilities.
    """

    kind = "mixture_combine"
    tag = 13

    def __init__(self, name: str, gates: str, experts: str, num_classes: int, num_mixtures: int):
        super().__init__(name, (gates, experts))
        self.num_classes = num_classes
        self.num_mixtures = num_mixtures

    def output_shape(self, in_shapes):
        c, m = self.num_classes, self.num_mixtures
        if in_shapes[0] != (c * (m + 1),) or in_shapes[1] != (c * m,):
            raise ShapeMismatchError(f"{self.name}: gate/expert widths {in_shapes} do not match C={c}, M={m}")
        return (c,)

    def forward(self, xs, train, prev_cache=None):
        b = xs[0].shape[0]
        gates = xs[0].reshape(b, self.num_classes, self.num_mixtures + 1)[:, :, :self.num_mixtures]
        experts = xs[1].reshape(b, self.num_classes, self.num_mixtures)
        return (gates * experts).sum(axis=-1), None

    def backward(self, grad, xs, out, cache):
        b = grad.shape[0]
        c, m = self.num_classes, self.num_mixtures
        gates = xs[0].reshape(b, c, m + 1)
        experts = xs[1].reshape(b, c, m)
        d_gates = np.zeros_like(gates)
        d_gates[:, :, :m] = grad[:, :, None] * experts
        d_experts = grad[:, :, None] * gates[:, :, :m]
        return [d_gates.reshape(b, -1), d_experts.reshape(b, -1)], {}


class Dropout(_Elementwise):
    """Inverted dropout: survivors are divided by ``keep_prob`` at train time."""

    kind = "dropout"
    tag = 5

    def __init__(self, name: str, src: str, keep_prob: float):
        super().__init__(name, src)
        if not (0.0 < keep_prob <= 1.0):
            raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
        self.keep_prob = keep_prob

    def forward(self, xs, train, prev_cache=None):
        x = xs[0]
        if not train or self.keep_prob == 1.0:
            return x, None
        if prev_cache is not None and prev_cache.shape == x.shape:
            mask = prev_cache
        else:
            mask = (self.rng.random(x.shape) < self.keep_prob).astype(x.dtype) / x.dtype.type(self.keep_prob)
        return x * mask, mask

    def backward(self, grad, xs, out, cache):
        if cache is None:
            return [grad], {}
        return [grad * cache], {}


class Add(LayerNode):
    kind = "add"
    tag = 6

    def output_shape(self, in_shapes):
        if any(s != in_shapes[0] for s in in_shapes):
            raise ShapeMismatchError(f"{self.name}: add operands differ in shape {in_shapes}")
        return in_shapes[0]

    def forward(self, xs, train, prev_cache=None):
        out = xs[0]
        for x in xs[1:]:
            out = out + x
        return out, None

    def backward(self, grad, xs, out, cache):
        return [grad] * len(xs), {}


class Concat(LayerNode):
    kind = "concat"
    tag = 7

    def output_shape(self, in_shapes):
        if any(len(s) != 1 for s in in_shapes):
            raise ShapeMismatchError(f"{self.name}: concat expects flat inputs, got {in_shapes}")
        return (sum(s[0] for s in in_shapes),)

    def forward(self, xs, train, prev_cache=None):
        return np.concatenate(xs, axis=1), None

    def backward(self, grad, xs, out, cache):
        edges = np.cumsum([x.shape[1] for x in xs])[:-1]
        return list(np.split(grad, edges, axis=1)), {}


class Conv1x1(LayerNode):
    """
    Kernel-size-1 convolution over a ``(features, 1)`` layout.

    Each feature position is mapped from 1 input channel to ``channels``
    outputs with a shared weight row and bias.
    """

    kind = "conv1x1"
    tag = 8

    def __init__(self, name: str, src: str, channels: int):
        super().__init__(name, (src,))
        self.channels = channels
        self.params["weight"] = np.zeros((1, channels))
        self.params["bias"] = np.zeros((channels,))

    def output_shape(self, in_shapes):
        if len(in_shapes[0]) != 1:
            raise ShapeMismatchError(f"{self.name}: conv1x1 expects flat input, got {in_shapes[0]}")
        return (in_shapes[0][0], self.channels)

    def init_params(self, rng, dtype):
        bound = glorot_bound(1, self.channels)
        self.params["weight"] = rng.uniform(-bound, bound, size=(1, self.channels)).astype(dtype)
        self.params["bias"] = np.zeros((self.channels,), dtype=dtype)

    def forward(self, xs, train, prev_cache=None):
        return xs[0][:, :, None] * self.params["weight"][0] + self.params["bias"], None

    def backward(self, grad, xs, out, cache):
        grads = {
            "weight": (xs[0][:, :, None] * grad).sum(axis=(0, 1))[None, :],
            "bias": grad.sum(axis=(0, 1)),
        }
        return [(grad * self.params["weight"][0]).sum(axis=-1)], grads


class MaxPool1(_Elementwise):
    """Max-pool with kernel 1 and stride 1, an identity kept as its own node."""

    kind = "maxpool1"
    tag = 9

    def forward(self, xs, train, prev_cache=None):
        return xs[0], None

    def backward(self, grad, xs, out, cache):
        return [grad], {}


class Flatten(LayerNode):
    kind = "flatten"
    tag = 10

    def __init__(self, name: str, src: str):
        super().__init__(name, (src,))

    def output_shape(self, in_shapes):
        return (int(np.prod(in_shapes[0])),)

    def forward(self, xs, train, prev_cache=None):
        return xs[0].reshape(xs[0].shape[0], -1), None

    def backward(self, grad, xs, out, cache):
        return [grad.reshape(xs[0].shape)], {}


NODE_TYPES = {
    cls.tag: cls
    for cls in (InputNode, Dense, ReLU, Sigmoid, Softmax, Dropout, Add, Concat,
                Conv1x1, MaxPool1, Flatten, Projection, GroupedSoftmax, MixtureCombine)
}
