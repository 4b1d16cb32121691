"""Versioned binary model container.

Layout (all integers little-endian):

  magic   4 bytes   b"RETF"
  version u32       1 = float64 payload, 2 = int8 + per-tensor scales
  [v2 only] element-type tag: u32 length + UTF-8 bytes (currently "int8")
  config  u32 length + UTF-8 JSON of the model configuration
  payload v1: every parameter as float64, canonical order, row-major
          v2: per tensor one float64 scale, then its int8 values

Round-trips are bit-exact; loaders reject trailing or missing bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .compression import QuantizedTensor
from .model import LayerParams, ModelConfig, ParamSet, _LAYER_PAIRS, _freeze, iter_params

MAGIC = b"RETF"
VERSION_FLOAT64 = 1
VERSION_INT8 = 2
_INT8_TAG = "int8"

_CONFIG_KEYS = ("vocab_size", "max_seq_len", "d_model", "n_heads",
                "d_ff", "n_layers", "use_bias")


def config_to_json_dict(cfg: ModelConfig) -> dict:
    doc = {key: getattr(cfg, key) for key in _CONFIG_KEYS}
    # structural-pruning fields only appear when they carry information,
    # so ordinary models serialize with exactly the documented keys
    if cfg.head_dim is not None:
        doc["head_dim"] = cfg.head_dim
    if cfg.layer_heads is not None:
        doc["layer_heads"] = list(cfg.layer_heads)
    return doc


def config_from_json_dict(doc: dict, *, allow_pruned: bool = True) -> ModelConfig:
    """Parse a config JSON object with key-specific error messages."""
    if not isinstance(doc, dict):
        raise ValueError("config: expected a JSON object")
    allowed = set(_CONFIG_KEYS) | ({"head_dim", "layer_heads"} if allow_pruned else set())
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ValueError(f"config: unknown key '{unknown[0]}'")
    kwargs = {}
    for key in _CONFIG_KEYS:
        if key == "use_bias":
            value = doc.get(key, False)
            if not isinstance(value, bool):
                raise ValueError(f"config: key 'use_bias' must be a boolean, got {value!r}")
        else:
            if key not in doc:
                raise ValueError(f"config: missing required key '{key}'")
            value = doc[key]
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError(f"config: key '{key}' must be an integer, got {value!r}")
        kwargs[key] = value
    if "head_dim" in doc:
        if not isinstance(doc["head_dim"], int) or isinstance(doc["head_dim"], bool):
            raise ValueError(f"config: key 'head_dim' must be an integer, got {doc['head_dim']!r}")
        kwargs["head_dim"] = doc["head_dim"]
    if "layer_heads" in doc:
        lh = doc["layer_heads"]
        if not isinstance(lh, list) or not all(isinstance(h, int) and not isinstance(h, bool) for h in lh):
            raise ValueError(f"config: key 'layer_heads' must be a list of integers, got {lh!r}")
        kwargs["layer_heads"] = tuple(lh)
    try:
        return ModelConfig(**kwargs)
    except ValueError as exc:
        raise ValueError(f"config: {exc}") from exc


def _config_block(cfg: ModelConfig) -> bytes:
    raw = json.dumps(config_to_json_dict(cfg), sort_keys=True).encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ValueError(f"{self.path}: truncated model file")
        out = self.blob[self.pos: self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self):
        if self.pos != len(self.blob):
            raise ValueError(f"{self.path}: {len(self.blob) - self.pos} trailing bytes")


def _shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Array shapes in canonical order, derived from the config alone."""
    d, f = cfg.d_model, cfg.d_ff
    out = [("tok_emb", (cfg.vocab_size, d)), ("pos_emb", (cfg.max_seq_len, d))]
    for i in range(cfg.n_layers):
        w = cfg.attn_width(i)
        weights = {"wq": (d, w), "wk": (d, w), "wv": (d, w),
                   "wo": (w, d), "w1": (d, f), "w2": (f, d)}
        biases = {"bq": (w,), "bk": (w,), "bv": (w,), "bo": (d,), "b1": (f,), "b2": (d,)}
        for wname, bname in _LAYER_PAIRS:
            out.append((f"layers.{i}.{wname}", weights[wname]))
            if cfg.use_bias:
                out.append((f"layers.{i}.{bname}", biases[bname]))
    return out


def _params_from_arrays(cfg: ModelConfig, arrays: dict[str, np.ndarray]) -> ParamSet:
    layers = []
    for i in range(cfg.n_layers):
        lay = LayerParams(wq=None, wk=None, wv=None, wo=None, w1=None, w2=None)  # type: ignore[arg-type]
        for wname, bname in _LAYER_PAIRS:
            setattr(lay, wname, arrays[f"layers.{i}.{wname}"])
            if cfg.use_bias:
                setattr(lay, bname, arrays[f"layers.{i}.{bname}"])
        layers.append(lay)
    return _freeze(ParamSet(tok_emb=arrays["tok_emb"], pos_emb=arrays["pos_emb"], layers=layers))


def save_model(path: str | Path, cfg: ModelConfig, p: ParamSet) -> None:
    """Write a version-1 (float64) model file."""
    chunks = [MAGIC, struct.pack("<I", VERSION_FLOAT64), _config_block(cfg)]
    for _, arr in iter_params(p):
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def save_quantized_model(
    path: str | Path, cfg: ModelConfig, quantized: list[tuple[str, QuantizedTensor]]
) -> None:
    """Write a version-2 (int8 + scales) model file."""
    tag = _INT8_TAG.encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION_INT8),
              struct.pack("<I", len(tag)) + tag, _config_block(cfg)]
    for _, qt in quantized:
        chunks.append(struct.pack("<d", qt.scale))
        chunks.append(qt.values.astype("|i1").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_header(path: str | Path) -> tuple[int, ModelConfig, _Reader]:
    blob = Path(path).read_bytes()
    r = _Reader(blob, str(path))
    if r.take(4) != MAGIC:
        raise ValueError(f"{path}: not a model file (bad magic)")
    version = r.u32()
    if version not in (VERSION_FLOAT64, VERSION_INT8):
        raise ValueError(f"{path}: unsupported format version {version}")
    if version == VERSION_INT8:
        tag = r.take(r.u32()).decode("utf-8")
        if tag != _INT8_TAG:
            raise ValueError(f"{path}: unsupported element type '{tag}'")
    try:
        doc = json.loads(r.take(r.u32()).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: corrupt config block: {exc}") from exc
    cfg = config_from_json_dict(doc)
    return version, cfg, r


def load_model(path: str | Path) -> tuple[ModelConfig, ParamSet]:
    """Load a version-1 model file; rejects quantized files."""
    version, cfg, r = read_header(path)
    if version != VERSION_FLOAT64:
        raise ValueError(
            f"{path}: version {version} holds int8 data; expected a float64 (version 1) file"
        )
    arrays = {}
    for name, shape in _shapes(cfg):
        n = int(np.prod(shape))
        arrays[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    r.done()
    return cfg, _params_from_arrays(cfg, arrays)


def load_quantized_model(
    path: str | Path,
) -> tuple[ModelConfig, list[tuple[str, QuantizedTensor]]]:
    """Load a version-2 model file as named quantized tensors."""
    version, cfg, r = read_header(path)
    if version != VERSION_INT8:
        raise ValueError(
            f"{path}: version {version} holds float64 data; expected an int8 (version 2) file"
        )
    tensors = []
    for name, shape in _shapes(cfg):
        scale = struct.unpack("<d", r.take(8))[0]
        n = int(np.prod(shape))
        # bias vectors are stored (and quantized) as 1 x n tensors
        qshape = shape if len(shape) == 2 else (1, n)
        values = np.frombuffer(r.take(n), dtype="|i1").reshape(qshape).copy()
        tensors.append((name, QuantizedTensor(qshape[0], qshape[1], values, scale)))
    r.done()
    return cfg, tensors
