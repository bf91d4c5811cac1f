"""Model graphs: construction, forward and backward passes, initialization."""

from typing import Any, Dict, List, Optional, Sequence, Tuple
import hashlib
import logging

import numpy as np

from yt8m_lab.errors import NoCachedForwardError, NonFiniteValueError, ShapeMismatchError
from yt8m_lab.models.specs import ArchitectureSpec, RegConfig
from yt8m_lab.nn.layers import (
    Add,
    Concat,
    Conv1x1,
    Dense,
    Dropout,
    Flatten,
    GroupedSoftmax,
    InputNode,
    LayerNode,
    MaxPool1,
    MixtureCombine,
    Projection,
    ReLU,
    Sigmoid,
    Softmax,
)

logger = logging.getLogger(__name__)

Tensor2 = np.ndarray
ParamKey = str

_INIT_STREAM = 0
_DROPOUT_STREAM = 1


def node_stream(seed: int, name: str, purpose: int) -> np.random.Generator:
    """
    PCG64 generator for one node, keyed by the node name.

    Keying by name (not position) keeps a node's stream stable when other
    nodes are added or removed, e.g. between a residual net and its skip-free twin.
    """
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    name_key = int.from_bytes(digest, "little")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), name_key, purpose])))


class ModelGraph:
    """
    Topologically ordered layer graph with a single input and a single output.

    Parameters are addressed as ``"<node name>/<param name>"``.
    """

    def __init__(
        self,
        nodes: List[LayerNode],
        output: str,
        input_dim: int,
        output_dim: int,
        output_activation: Optional[str] = None,
        reg: Optional[RegConfig] = None,
        dtype=np.float64,
        rng_seed: int = 0,
        spec: Optional[ArchitectureSpec] = None,
        num_classes: Optional[int] = None,
    ):
        self.nodes = nodes
        self.by_name = {node.name: node for node in nodes}
        self.input_name = nodes[0].name
        self.output = output
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.output_activation = output_activation
        self.reg = reg or RegConfig()
        self.dtype = np.dtype(dtype)
        self.rng_seed = rng_seed
        self.mode = "infer"
        self.spec = spec
        self.num_classes = num_classes if num_classes is not None else output_dim
        self._cache: Optional[Dict[str, Any]] = None

    @property
    def features(self) -> str:
        """Which slice of the feature vector the model reads."""
        return self.spec.features if self.spec is not None else "all"

    # parameters

    def parameters(self) -> Dict[ParamKey, np.ndarray]:
        return {
            f"{node.name}/{pname}": arr
            for node in self.nodes
            for pname, arr in node.params.items()
        }

    def trainable_keys(self) -> List[ParamKey]:
        return [
            f"{node.name}/{pname}"
            for node in self.nodes if node.trainable
            for pname in node.params
        ]

    def set_parameter(self, key: ParamKey, value: np.ndarray) -> None:
        node_name, pname = key.rsplit("/", 1)
        node = self.by_name[node_name]
        if node.params[pname].shape != value.shape:
            raise ShapeMismatchError(f"{key}: expected {node.params[pname].shape}, got {value.shape}")
        node.params[pname] = np.asarray(value, dtype=self.dtype)

    def parameter_count(self, trainable_only: bool = False) -> int:
        params = self.parameters()
        keys = self.trainable_keys() if trainable_only else params.keys()
        return int(sum(params[k].size for k in keys))

    def regularized_keys(self) -> List[ParamKey]:
        return [
            f"{node.name}/{pname}"
            for node in self.nodes if node.trainable
            for pname in node.regularized_params
        ]

    def regularization_loss(self) -> float:
        if self.reg.norm == "none" or self.reg.penalty == 0.0:
            return 0.0
        params = self.parameters()
        if self.reg.norm == "l2":
            return float(self.reg.penalty * sum(np.sum(params[k] ** 2) for k in self.regularized_keys()))
        return float(self.reg.penalty * sum(np.sum(np.abs(params[k])) for k in self.regularized_keys()))

    def regularization_grads(self) -> Dict[ParamKey, np.ndarray]:
        if self.reg.norm == "none":
            return {}
        params = self.parameters()
        if self.reg.norm == "l2":
            return {k: 2.0 * self.reg.penalty * params[k] for k in self.regularized_keys()}
        return {k: self.reg.penalty * np.sign(params[k]) for k in self.regularized_keys()}

    # passes

    def forward(self, batch: Tensor2, mode: Optional[str] = None, reuse_masks: bool = False) -> Tensor2:
        """
        Run the graph on a ``(batch, input_dim)`` array.

        In ``train`` mode dropout draws fresh masks from each node's stream,
        unless ``reuse_masks`` replays the masks of the previous forward pass.
        """
        mode = mode or self.mode
        batch = np.asarray(batch, dtype=self.dtype)
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise ShapeMismatchError(f"expected batch of shape (n, {self.input_dim}), got {batch.shape}")
        train = mode == "train"
        prev = self._cache["caches"] if (reuse_masks and self._cache) else {}

        values: Dict[str, np.ndarray] = {}
        caches: Dict[str, Any] = {}
        for node in self.nodes:
            xs = [batch] if isinstance(node, InputNode) else [values[src] for src in node.inputs]
            out, cache = node.forward(xs, train, prev.get(node.name))
            if not np.isfinite(out).all():
                raise NonFiniteValueError(node.name)
            values[node.name] = out
            caches[node.name] = cache

        self._cache = {"values": values, "caches": caches, "mode": mode}
        return values[self.output]

    def activation(self, name: str) -> np.ndarray:
        """Output of node ``name`` from the last forward pass."""
        if self._cache is None:
            raise NoCachedForwardError()
        return self._cache["values"][name]

    def backward_with_input(self, grad_out: Tensor2) -> Tuple[Dict[ParamKey, np.ndarray], np.ndarray]:
        if self._cache is None:
            raise NoCachedForwardError()
        values = self._cache["values"]
        caches = self._cache["caches"]
        if grad_out.shape != values[self.output].shape:
            raise ShapeMismatchError(f"grad_out shape {grad_out.shape} != output shape {values[self.output].shape}")

        node_grads: Dict[str, np.ndarray] = {self.output: np.asarray(grad_out, dtype=self.dtype)}
        param_grads: Dict[ParamKey, np.ndarray] = {}
        for node in reversed(self.nodes):
            grad = node_grads.pop(node.name, None)
            if grad is None:
                if node.trainable:
                    for pname, arr in node.params.items():
                        param_grads[f"{node.name}/{pname}"] = np.zeros_like(arr)
                continue
            if isinstance(node, InputNode):
                node_grads[node.name] = grad
                break
            xs = [values[src] for src in node.inputs]
            input_grads, grads = node.backward(grad, xs, values[node.name], caches[node.name])
            for pname, g in grads.items():
                param_grads[f"{node.name}/{pname}"] = g
            for src, g in zip(node.inputs, input_grads):
                node_grads[src] = node_grads[src] + g if src in node_grads else g

        for key, g in self.regularization_grads().items():
            param_grads[key] = param_grads[key] + g
        dx = node_grads.get(self.input_name, np.zeros_like(values[self.input_name]))
        return param_grads, dx

    def backward(self, grad_out: Tensor2) -> Dict[ParamKey, np.ndarray]:
        return self.backward_with_input(grad_out)[0]


def forward(graph: ModelGraph, batch: Tensor2, mode: str = "infer") -> Tensor2:
    return graph.forward(batch, mode)


def backward(graph: ModelGraph, batch: Optional[Tensor2], grad_out: Tensor2) -> Dict[ParamKey, np.ndarray]:
    """Parameter gradients for ``grad_out``, reusing the cached forward pass on ``batch``."""
    if graph._cache is None:
        raise NoCachedForwardError()
    if batch is not None and np.shape(batch) != graph.activation(graph.input_name).shape:
        raise ShapeMismatchError("backward batch differs from the cached forward batch")
    return graph.backward(grad_out)


def init_params(graph: ModelGraph, seed: int) -> ModelGraph:
    """
    Initialize every parameter deterministically from ``seed``.

    Dense weights are Glorot-uniform, biases zero, projections per their
    ``init`` mode. Dropout streams are reset from the same seed.
    """
    for node in graph.nodes:
        if node.params:
            node.init_params(node_stream(seed, node.name, _INIT_STREAM), graph.dtype)
        if isinstance(node, Dropout):
            node.rng = node_stream(seed, node.name, _DROPOUT_STREAM)
    graph.rng_seed = seed
    graph._cache = None
    return graph


class GraphBuilder:
    """Appends nodes in topological order while tracking feature shapes."""

    def __init__(self, input_dim: int, input_name: str = "input"):
        self.input_dim = input_dim
        self.input = input_name
        self.nodes: List[LayerNode] = []
        self.shapes: Dict[str, Tuple[int, ...]] = {}
        self._append(InputNode(input_name, input_dim))

    def _append(self, node: LayerNode) -> str:
        if node.name in self.shapes:
            raise ValueError(f"duplicate node name {node.name!r}")
        missing = [src for src in node.inputs if src not in self.shapes]
        if missing:
            raise ValueError(f"node {node.name!r} reads undefined nodes {missing}")
        self.shapes[node.name] = node.output_shape([self.shapes[src] for src in node.inputs])
        self.nodes.append(node)
        return node.name

    def width(self, name: str) -> int:
        return self.shapes[name][0]

    def dense(self, name: str, src: str, units: int, bias: bool = True) -> str:
        return self._append(Dense(name, src, self.width(src), units, bias=bias))

    def projection(self, name: str, src: str, units: int, init: str = "glorot", trainable: bool = True) -> str:
        return self._append(Projection(name, src, self.width(src), units, init=init, trainable=trainable))

    def relu(self, name: str, src: str) -> str:
        return self._append(ReLU(name, src))

    def sigmoid(self, name: str, src: str) -> str:
        return self._append(Sigmoid(name, src))

    def softmax(self, name: str, src: str) -> str:
        return self._append(Softmax(name, src))

    def grouped_softmax(self, name: str, src: str, group_size: int) -> str:
        return self._append(GroupedSoftmax(name, src, group_size))

    def mixture_combine(self, name: str, gates: str, experts: str, num_classes: int, num_mixtures: int) -> str:
        return self._append(MixtureCombine(name, gates, experts, num_classes, num_mixtures))

    def dropout(self, name: str, src: str, keep_prob: float) -> str:
        return self._append(Dropout(name, src, keep_prob))

    def add(self, name: str, srcs: Sequence[str]) -> str:
        return self._append(Add(name, srcs))

    def concat(self, name: str, srcs: Sequence[str]) -> str:
        return self._append(Concat(name, srcs))

    def conv1x1(self, name: str, src: str, channels: int) -> str:
        return self._append(Conv1x1(name, src, channels))

    def maxpool1(self, name: str, src: str) -> str:
        return self._append(MaxPool1(name, src))

    def flatten(self, name: str, src: str) -> str:
        return self._append(Flatten(name, src))

    def build(
        self,
        output: str,
        seed: int = 0,
        output_activation: Optional[str] = None,
        reg: Optional[RegConfig] = None,
        dtype=np.float64,
        spec: Optional[ArchitectureSpec] = None,
        num_classes: Optional[int] = None,
    ) -> ModelGraph:
        shape = self.shapes[output]
        if len(shape) != 1:
            raise ShapeMismatchError(f"graph output must be flat, got {shape}")
        graph = ModelGraph(
            nodes=list(self.nodes),
            output=output,
            input_dim=self.input_dim,
            output_dim=shape[0],
            output_activation=output_activation,
            reg=reg,
            dtype=dtype,
            rng_seed=seed,
            spec=spec,
            num_classes=num_classes,
        )
        return init_params(graph, seed)
