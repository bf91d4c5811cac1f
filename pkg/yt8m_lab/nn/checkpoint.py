"""
YTCK checkpoint files.

Layout (little-endian): ``b"YTCK"``, version byte ``0x01``, u32 length and
UTF-8 JSON of the build metadata, u32 node count, then per node a u8 kind
tag, u8 parameter count and per parameter a u8 rank followed by u32 dims.
Parameter tensors follow as f64 in node order.
"""

from pathlib import Path
from typing import Callable, Dict, Optional
import json
import logging
import struct

import numpy as np

from yt8m_lab.errors import CheckpointError
from yt8m_lab.nn.graph import ModelGraph

logger = logging.getLogger(__name__)

MAGIC = b"YTCK"
VERSION = 1


def _metadata(graph: ModelGraph) -> Dict:
    return {
        "spec": graph.spec.model_dump(mode="json") if graph.spec is not None else None,
        "input_dim": graph.input_dim,
        "num_classes": graph.num_classes,
        "seed": graph.rng_seed,
    }


def save_checkpoint(graph: ModelGraph, path) -> int:
    """
    Write ``graph`` to ``path``.

    Returns:
        Number of bytes written.
    """
    meta = json.dumps(_metadata(graph), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, bytes([VERSION]), struct.pack("<I", len(meta)), meta, struct.pack("<I", len(graph.nodes))]
    tensors = []
    for node in graph.nodes:
        parts.append(struct.pack("<BB", node.tag, len(node.params)))
        for arr in node.params.values():
            parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            tensors.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    blob = b"".join(parts + tensors)
    try:
        Path(path).write_bytes(blob)
    except OSError as e:
        logger.error(f"Error writing checkpoint {path}: {e}")
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint {path} ({len(blob)} bytes, {graph.parameter_count()} parameters)")
    return len(blob)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_metadata(path) -> Dict:
    data = _read_bytes(path)
    reader = _Reader(data, path)
    return _read_header(reader)


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e


def _read_header(reader: _Reader) -> Dict:
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{reader.path}: not a YTCK checkpoint")
    (version,) = reader.unpack("<B")
    if version != VERSION:
        raise CheckpointError(f"{reader.path}: unsupported checkpoint version {version}")
    (meta_len,) = reader.unpack("<I")
    return json.loads(reader.take(meta_len).decode("utf-8"))


def load_checkpoint(path, build: Callable[[Dict], ModelGraph], dtype: Optional[np.dtype] = None) -> ModelGraph:
    """
    Rebuild a graph from its metadata with ``build`` and fill in the stored parameters.

    The stored manifest must match the rebuilt graph node for node.
    """
    reader = _Reader(_read_bytes(path), path)
    meta = _read_header(reader)
    graph = build(meta)

    (node_count,) = reader.unpack("<I")
    if node_count != len(graph.nodes):
        raise CheckpointError(f"{path}: manifest has {node_count} nodes, architecture has {len(graph.nodes)}")
    shapes = []
    for node in graph.nodes:
        tag, nparams = reader.unpack("<BB")
        if tag != node.tag or nparams != len(node.params):
            raise CheckpointError(f"{path}: manifest mismatch at node {node.name!r}")
        for pname, arr in node.params.items():
            (ndim,) = reader.unpack("<B")
            shape = reader.unpack(f"<{ndim}I")
            if tuple(shape) != arr.shape:
                raise CheckpointError(f"{path}: shape mismatch for {node.name}/{pname}: {shape} vs {arr.shape}")
            shapes.append((node, pname, tuple(shape)))

    for node, pname, shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape)
        node.params[pname] = values.astype(dtype or graph.dtype)
    if reader.pos != len(reader.data):
        raise CheckpointError(f"{path}: {len(reader.data) - reader.pos} trailing bytes")
    logger.info(f"Loaded checkpoint {path}")
    return graph
