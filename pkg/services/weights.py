"""OPFW weight files.

Layout (little-endian)::

    b"OPFW" | version (1 byte) | manifest length (uint32) | JSON manifest | float32 payloads

The manifest holds the ModelConfig under "config" and, per tensor, its shape,
dtype and byte offset relative to the first payload byte.

Converter contract for checkpoints of the usual single-convolution ConvLSTM cell
(one Conv2d over concat[x, H] with 4*hidden output channels split i, f, o, g, and
a 1x1 Conv2d / Linear head over hidden channels):

    conv.weight[0*hid:1*hid, :nf]  -> W_xi     conv.weight[0*hid:1*hid, nf:] -> W_hi
    conv.weight[1*hid:2*hid, :nf]  -> W_xf     conv.weight[1*hid:2*hid, nf:] -> W_hf
    conv.weight[2*hid:3*hid, :nf]  -> W_xo     conv.weight[2*hid:3*hid, nf:] -> W_ho
    conv.weight[3*hid:4*hid, :nf]  -> W_xg     conv.weight[3*hid:4*hid, nf:] -> W_hg
    conv.bias split the same way   -> b_i, b_f, b_o, b_g
    head.weight (2, hid[, 1, 1])   -> head_W   (row 0 = no-fire, row 1 = fire)
    head.bias (2,)                 -> head_b

`from_combined_conv` implements this table on numpy arrays exported from such a
checkpoint.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from framework.errors import (
    BadMagic,
    CorruptHeader,
    InferenceError,
    NonFiniteWeight,
    ShapeMismatch,
    TruncatedPayload,
)
from models.danger import GATES, TENSOR_NAMES, ConvLstmWeights, ModelConfig
from utils.atomic import atomic_write_bytes

MAGIC = b"OPFW"
VERSION = 1
_PREFIX = struct.Struct("<4sBI")


def validate_weights(cfg: ModelConfig, tensors: Dict[str, np.ndarray]) -> ConvLstmWeights:
    expected = cfg.expected_shapes()
    for name in TENSOR_NAMES:
        if name not in tensors:
            raise ShapeMismatch(name, expected[name], ())
        t = tensors[name]
        if tuple(t.shape) != expected[name]:
            raise ShapeMismatch(name, expected[name], tuple(t.shape))
        if not np.all(np.isfinite(t)):
            raise NonFiniteWeight(name)
    frozen = {}
    for name in TENSOR_NAMES:
        arr = np.array(tensors[name], dtype=np.float32)
        arr.setflags(write=False)
        frozen[name] = arr
    return ConvLstmWeights(tensors=frozen)


def encode_weights(cfg: ModelConfig, weights: ConvLstmWeights) -> bytes:
    manifest: Dict[str, object] = {"config": cfg.model_dump(mode="json"), "tensors": {}}
    payload = []
    offset = 0
    for name in TENSOR_NAMES:
        raw = np.ascontiguousarray(weights[name], dtype="<f4").tobytes()
        manifest["tensors"][name] = {"shape": list(weights[name].shape), "dtype": "float32", "offset": offset}
        payload.append(raw)
        offset += len(raw)
    head = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(head)) + head + b"".join(payload)


def decode_weights(data: bytes) -> Tuple[ModelConfig, ConvLstmWeights]:
    if len(data) < _PREFIX.size or data[:4] != MAGIC:
        raise BadMagic(MAGIC, bytes(data[:4]))
    _, version, head_len = _PREFIX.unpack_from(data, 0)
    if version != VERSION:
        raise BadMagic(MAGIC + bytes([VERSION]), bytes(data[:5]))
    start = _PREFIX.size
    if start + head_len > len(data):
        raise TruncatedPayload("OPFW manifest is truncated")
    try:
        manifest = json.loads(data[start:start + head_len].decode("utf-8"))
        cfg = ModelConfig(**manifest["config"])
        entries = {name: (tuple(e["shape"]), int(e["offset"]), e.get("dtype", "float32"))
                   for name, e in manifest["tensors"].items()}
    except (UnicodeDecodeError, KeyError, TypeError, AttributeError, ValueError) as e:
        raise CorruptHeader("OPFW", str(e)) from e
    payload = data[start + head_len:]
    tensors: Dict[str, np.ndarray] = {}
    for name, (shape, offset, dtype) in entries.items():
        try:
            count = int(np.prod(shape, dtype=np.int64))
            if dtype != "float32" or offset < 0 or min(shape, default=0) < 0 or offset + count * 4 > len(payload):
                raise TruncatedPayload(f"tensor '{name}' extends past the payload")
            tensors[name] = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        except (TypeError, ValueError) as e:
            raise CorruptHeader("OPFW", f"tensor '{name}' has shape {shape}") from e
    return cfg, validate_weights(cfg, tensors)


def load_weights(path: Path) -> Tuple[ModelConfig, ConvLstmWeights]:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise InferenceError(f"cannot read weights {path}: {e}") from e
    return decode_weights(data)


def save_weights(path: Path, cfg: ModelConfig, weights: ConvLstmWeights) -> Path:
    return atomic_write_bytes(path, encode_weights(cfg, weights))


def synthetic_weights(cfg: ModelConfig, seed: int = 0, scale: float = 0.3) -> ConvLstmWeights:
    """Desk-scale random weights for demos and tests."""
    rng = np.random.default_rng(seed)
    tensors = {
        name: (rng.standard_normal(shape) * scale).astype(np.float32)
        for name, shape in cfg.expected_shapes().items()
    }
    return validate_weights(cfg, tensors)


def zero_weights(cfg: ModelConfig) -> ConvLstmWeights:
    return validate_weights(cfg, {n: np.zeros(s, dtype=np.float32) for n, s in cfg.expected_shapes().items()})


def from_combined_conv(
    cfg: ModelConfig,
    conv_weight: np.ndarray,
    conv_bias: Optional[np.ndarray],
    head_weight: np.ndarray,
    head_bias: np.ndarray,
) -> ConvLstmWeights:
    """Split a concat[x, H] convolution into the named gate tensors."""
    hid, nf = cfg.hidden, cfg.nf
    expected = (4 * hid, nf + hid, cfg.kernel, cfg.kernel)
    if tuple(conv_weight.shape) != expected:
        raise ShapeMismatch("conv.weight", expected, tuple(conv_weight.shape))
    bias = np.zeros(4 * hid, dtype=np.float32) if conv_bias is None else np.asarray(conv_bias)
    tensors: Dict[str, np.ndarray] = {}
    for k, g in enumerate(GATES):
        block = conv_weight[k * hid:(k + 1) * hid]
        tensors[f"W_x{g}"] = block[:, :nf]
        tensors[f"W_h{g}"] = block[:, nf:]
        tensors[f"b_{g}"] = bias[k * hid:(k + 1) * hid]
    tensors["head_W"] = np.asarray(head_weight).reshape(cfg.classes, hid)
    tensors["head_b"] = np.asarray(head_bias).reshape(cfg.classes)
    return validate_weights(cfg, tensors)
