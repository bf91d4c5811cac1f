"""Builders turning an ArchitectureSpec into a ModelGraph."""

from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from yt8m_lab.errors import BadSpecError, UnknownArchitectureError
from yt8m_lab.models.specs import ARCHITECTURES, ArchitectureSpec, RegConfig, parse_architecture
from yt8m_lab.nn.graph import GraphBuilder, ModelGraph

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN: Dict[str, List[int]] = {
    "logreg": [],
    "moe": [],
    "moe_c": [2048],
    "mlp2000": [2000, 2000],
    "mlp3000": [3000, 3000],
    "mlp512_256": [512, 256],
    "mlp_res5": [784, 512, 512, 512, 256],
    "mlp_a": [1536] + [1024] * 8,
    "mlp_e": [4096, 4096, 4096],
    "ae_clf": [1152, 300],
    "cnn1": [6000],
    "mlp2048": [2048],
}

SOFTMAX_HEADS = {"mlp2000", "mlp3000", "cnn1"}
MIXTURES = {"moe", "moe_c"}
DROPOUT_ARCHS = {"mlp_e", "cnn1", "mlp2048"}

# (source layer, destination layer); layer 0 is the raw input
SKIPS: Dict[str, List[Tuple[int, int]]] = {
    "mlp_res5": [(0, 3), (2, 4)],
    "mlp_a": [(0, 3), (2, 4), (4, 6), (6, 8)],
}

STARTER_L2 = RegConfig(norm="l2", penalty=1e-8)


class ResolvedSpec:
    """An ArchitectureSpec with every default filled in."""

    def __init__(self, spec: ArchitectureSpec):
        if spec.name not in ARCHITECTURES:
            raise UnknownArchitectureError(spec.name)
        self.spec = spec
        self.name = spec.name
        self.hidden = list(spec.hidden_sizes) if spec.hidden_sizes is not None else list(DEFAULT_HIDDEN[spec.name])
        self.keep_prob = spec.keep_prob if spec.keep_prob is not None else (0.5 if spec.name in DROPOUT_ARCHS else 1.0)
        default_head = "softmax" if spec.name in SOFTMAX_HEADS else "sigmoid"
        self.output_activation = spec.output_activation or default_head
        if spec.reg is not None:
            self.reg = spec.reg
        else:
            self.reg = STARTER_L2 if spec.name in ("logreg", "moe", "moe_c") else RegConfig()
        self._check()

    def _check(self):
        expected = len(DEFAULT_HIDDEN[self.name])
        if len(self.hidden) != expected:
            raise BadSpecError(f"{self.name} takes {expected} hidden sizes, got {len(self.hidden)}")
        if self.name in MIXTURES and self.output_activation != "sigmoid":
            raise BadSpecError(f"{self.name} produces mixture probabilities; softmax output is not available")
        if self.name == "mlp_e" and self.hidden[1] != self.hidden[2]:
            raise BadSpecError("mlp_e adds one input projection to hidden layers 2 and 3; their sizes must match")
        if self.spec.keep_prob is not None and self.name not in DROPOUT_ARCHS and self.keep_prob < 1.0:
            logger.warning(f"{self.name} has no dropout layer; keep_prob={self.keep_prob} is ignored")


def _dense_relu(b: GraphBuilder, prefix: str, src: str, units: int) -> str:
    return b.relu(f"{prefix}/relu", b.dense(f"{prefix}/dense", src, units))


def _plain_stack(b: GraphBuilder, src: str, sizes: Sequence[int], keep_prob: Optional[float] = None) -> str:
    h = src
    for i, size in enumerate(sizes, 1):
        h = _dense_relu(b, f"hidden{i}", h, size)
        if keep_prob is not None:
            h = b.dropout(f"hidden{i}/dropout", h, keep_prob)
    return h


def _residual_stack(b: GraphBuilder, src: str, sizes: Sequence[int], skips: Sequence[Tuple[int, int]]) -> str:
    """
    Dense+ReLU stack where skip (a, d) adds layer a's output to layer d's pre-activation.

    Equal widths use a fixed identity projection, unequal widths a learned
    bias-free projection.
    """
    outputs = {0: src}
    h = src
    for i, size in enumerate(sizes, 1):
        pre = b.dense(f"hidden{i}/dense", h, size)
        incoming = []
        for a, d in skips:
            if d != i:
                continue
            source = outputs[a]
            if b.width(source) == size:
                incoming.append(b.projection(f"skip{a}_{d}", source, size, init="identity", trainable=False))
            else:
                incoming.append(b.projection(f"skip{a}_{d}", source, size, init="glorot"))
        if incoming:
            pre = b.add(f"hidden{i}/add", [pre] + incoming)
        h = b.relu(f"hidden{i}/relu", pre)
        outputs[i] = h
    return h


def _mixture(b: GraphBuilder, gate_src: str, expert_src: str, num_classes: int, num_mixtures: int) -> str:
    # gates carry no bias; gate M of each class feeds the zero expert
    gates = b.dense("gates", gate_src, num_classes * (num_mixtures + 1), bias=False)
    gate_probs = b.grouped_softmax("gates/softmax", gates, num_mixtures + 1)
    experts = b.dense("experts", expert_src, num_classes * num_mixtures)
    expert_probs = b.sigmoid("experts/sigmoid", experts)
    return b.mixture_combine("mixture", gate_probs, expert_probs, num_classes, num_mixtures)


def _body(b: GraphBuilder, r: ResolvedSpec, num_classes: int) -> Tuple[str, bool]:
    """Wire the architecture body; returns (node, already_normalized)."""
    x = b.input
    spec = r.spec
    if r.name == "logreg":
        return x, False
    if r.name == "moe":
        return _mixture(b, x, x, num_classes, spec.num_mixtures), True
    if r.name == "moe_c":
        hidden = _dense_relu(b, "expert_hidden", x, r.hidden[0])
        return _mixture(b, x, hidden, num_classes, spec.num_mixtures), True
    if r.name in ("mlp2000", "mlp3000", "mlp512_256", "ae_clf"):
        return _plain_stack(b, x, r.hidden), False
    if r.name == "mlp2048":
        return _plain_stack(b, x, r.hidden, keep_prob=r.keep_prob), False
    if r.name in SKIPS:
        skips = SKIPS[r.name] if spec.skip_connections else []
        return _residual_stack(b, x, r.hidden, skips), False
    if r.name == "mlp_e":
        noise = b.projection("input_noise", x, r.hidden[1], init="normal")
        h = _dense_relu(b, "hidden1", x, r.hidden[0])
        h = b.dropout("hidden1/dropout", h, r.keep_prob)
        for i in (2, 3):
            h = _dense_relu(b, f"hidden{i}", h, r.hidden[i - 1])
            h = b.add(f"hidden{i}/add", [h, noise])
            h = b.dropout(f"hidden{i}/dropout", h, r.keep_prob)
        return h, False
    if r.name == "cnn1":
        pooled = b.maxpool1("pool", b.conv1x1("conv", x, spec.conv_channels))
        flat = b.flatten("flatten", pooled)
        h = _dense_relu(b, "hidden1", flat, r.hidden[0])
        return b.dropout("hidden1/dropout", h, r.keep_prob), False
    raise UnknownArchitectureError(r.name)


def build(
    spec: ArchitectureSpec,
    input_dim: int,
    num_classes: int,
    seed: int = 0,
    dtype=np.float64,
) -> ModelGraph:
    """
    Build and initialize the graph for ``spec``.

    Args:
        spec: Architecture description; unset fields take the architecture defaults.
        input_dim: Width of the feature vector the model reads.
        num_classes: Number of output classes.
        seed: Initialization and dropout seed.
        dtype: Floating type of parameters and activations.
    """
    if input_dim < 1 or num_classes < 1:
        raise BadSpecError(f"input_dim and num_classes must be positive, got {input_dim}, {num_classes}")
    r = ResolvedSpec(spec)
    b = GraphBuilder(input_dim)
    body, normalized = _body(b, r, num_classes)
    if normalized:
        output = body
    else:
        logits = b.dense("output/dense", body, num_classes)
        if r.output_activation == "softmax":
            output = b.softmax("output/softmax", logits)
        else:
            output = b.sigmoid("output/sigmoid", logits)
    graph = b.build(
        output,
        seed=seed,
        output_activation=r.output_activation,
        reg=r.reg,
        dtype=dtype,
        spec=spec,
        num_classes=num_classes,
    )
    logger.info(f"Built {spec.name}: {graph.parameter_count()} parameters, {len(graph.nodes)} nodes")
    return graph


def build_named(name: str, input_dim: int, num_classes: int, seed: int = 0, dtype=np.float64, **fields) -> ModelGraph:
    if name not in ARCHITECTURES:
        raise UnknownArchitectureError(name)
    return build(parse_architecture({"name": name, **fields}), input_dim, num_classes, seed, dtype)


def build_meta(input_dim: int, num_classes: int, seed: int = 0, hidden: int = 2048, keep_prob: float = 0.5, dtype=np.float64) -> ModelGraph:
    """Default stacking meta-network: dense+ReLU hidden layer, dropout, sigmoid output."""
    spec = ArchitectureSpec(name="mlp2048", hidden_sizes=[hidden], keep_prob=keep_prob)
    return build(spec, input_dim, num_classes, seed, dtype)


def skip_keys(graph: ModelGraph) -> List[str]:
    """Parameter keys of every skip projection in ``graph``."""
    return [key for key in graph.parameters() if key.startswith("skip")]


def build_from_metadata(meta: Dict, dtype=np.float64) -> ModelGraph:
    """Rebuild an architecture from checkpoint metadata."""
    if not meta.get("spec"):
        raise BadSpecError("checkpoint metadata has no architecture spec")
    spec = parse_architecture(meta["spec"])
    return build(spec, int(meta["input_dim"]), int(meta["num_classes"]), int(meta.get("seed", 0)), dtype)
