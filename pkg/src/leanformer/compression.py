"""Compression passes: dimension reduction, pruning and int8 quantization.

Four independent ways to shrink a model. Dimension reduction is a config
transform (the small model is built fresh, not distilled); magnitude
pruning zeroes weights in place of structure; head and layer pruning
remove whole blocks; quantization rewrites float64 tensors as int8 plus
one symmetric scale per tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import (
    LayerParams,
    ModelConfig,
    ParamSet,
    _LAYER_PAIRS,
    _freeze,
    iter_params,
    param_count_enumerated,
)
from .numerics import Matrix


@dataclass(frozen=True)
class QuantizedTensor:
    """Signed int8 values with one positive symmetric scale.

    Values stay within [-127, 127]; -128 is never produced. A zero tensor
    gets scale 1.0 by convention.
    """

    rows: int
    cols: int
    values: np.ndarray  # int8, shape (rows, cols)
    scale: float

    def __post_init__(self):
        if self.values.shape != (self.rows, self.cols):
            raise ValueError(
                f"QuantizedTensor: values shape {self.values.shape} != ({self.rows}, {self.cols})"
            )
        if self.values.dtype != np.int8:
            raise ValueError(f"QuantizedTensor: dtype must be int8, got {self.values.dtype}")
        if np.any(self.values < -127):
            raise ValueError("QuantizedTensor: -128 is outside the symmetric range")
        if not self.scale > 0:
            raise ValueError(f"QuantizedTensor: scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class CompressionReport:
    pass_name: str
    params_before: int
    params_after: int
    bytes_before: int
    bytes_after: int
    sparsity: float
    max_error: float

    def __post_init__(self):
        if self.params_after > self.params_before or self.bytes_after > self.bytes_before:
            raise ValueError("CompressionReport: pass may not grow the model")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"CompressionReport: sparsity {self.sparsity} outside [0, 1]")

    def lines(self) -> list[str]:
        return [
            f"pass:        {self.pass_name}",
            f"parameters:  {self.params_before} -> {self.params_after}",
            f"bytes:       {self.bytes_before} -> {self.bytes_after}",
            f"sparsity:    {self.sparsity:.4f}",
            f"max error:   {self.max_error:.6g}",
        ]


def _sparsity(p: ParamSet) -> float:
    total = param_count_enumerated(p)
    zero = sum(int(np.count_nonzero(arr == 0.0)) for _, arr in iter_params(p))
    return zero / total if total else 0.0


def reduce_config(cfg: ModelConfig, factor: int = 2) -> ModelConfig:
    """Shrink d_model, n_heads and d_ff by an integer factor.

    Vocab, sequence length and depth stay put. The reduced model is meant
    to be freshly initialized, not projected from the original weights.
    """
    if factor < 1:
        raise ValueError(f"reduce_config: factor must be >= 1, got {factor}")
    if factor == 1:
        return cfg
    if cfg.head_dim is not None or cfg.layer_heads is not None:
        raise ValueError("reduce_config: cannot reduce a structurally pruned config")
    for name in ("d_model", "n_heads", "d_ff"):
        if getattr(cfg, name) % factor != 0:
            raise ValueError(
                f"reduce_config: {name} ({getattr(cfg, name)}) not divisible by {factor}"
            )
    return replace(
        cfg,
        d_model=cfg.d_model // factor,
        n_heads=cfg.n_heads // factor,
        d_ff=cfg.d_ff // factor,
    )


def prune_magnitude(p: ParamSet, threshold: float) -> tuple[ParamSet, CompressionReport]:
    """Zero every parameter with |w| < threshold; structure is untouched.

    Parameter and byte counts do not change; the resulting sparsity is the
    compression proxy. The largest zeroed magnitude is reported as the
    reconstruction error (strictly below the threshold by construction).
    """
    if threshold < 0:
        raise ValueError(f"prune_magnitude: threshold must be >= 0, got {threshold}")

    before = param_count_enumerated(p)
    max_err = 0.0

    def prune_arr(arr: np.ndarray) -> np.ndarray:
        nonlocal max_err
        mask = np.abs(arr) < threshold
        if mask.any():
            max_err = max(max_err, float(np.max(np.abs(arr[mask]))))
        out = arr.copy()
        out[mask] = 0.0
        return out

    layers = []
    for lay in p.layers:
        nl = LayerParams(
            wq=prune_arr(lay.wq), wk=prune_arr(lay.wk), wv=prune_arr(lay.wv),
            wo=prune_arr(lay.wo), w1=prune_arr(lay.w1), w2=prune_arr(lay.w2),
        )
        for _, bname in _LAYER_PAIRS:
            b = getattr(lay, bname)
            if b is not None:
                setattr(nl, bname, prune_arr(b))
        layers.append(nl)
    pruned = ParamSet(tok_emb=prune_arr(p.tok_emb), pos_emb=prune_arr(p.pos_emb), layers=layers)

    report = CompressionReport(
        pass_name="prune-magnitude",
        params_before=before,
        params_after=before,
        bytes_before=8 * before,
        bytes_after=8 * before,
        sparsity=_sparsity(pruned),
        max_error=max_err,
    )
    return _freeze(pruned), report


def head_importance(p: ParamSet, cfg: ModelConfig, layer: int) -> list[float]:
    """Frobenius norm of each head's output-projection row block.

    A head whose slice of Wo is near zero contributes almost nothing to
    the layer output, so its score approaches zero.
    """
    if not 0 <= layer < len(p.layers):
        raise ValueError(f"head_importance: layer {layer} out of range [0, {len(p.layers)})")
    heads = cfg.heads_in_layer(layer)
    wo = p.layers[layer].wo
    dh = wo.shape[0] // heads
    return [float(np.linalg.norm(wo[h * dh:(h + 1) * dh, :])) for h in range(heads)]


def prune_heads(
    p: ParamSet, cfg: ModelConfig, layer: int, keep: set[int]
) -> tuple[ParamSet, ModelConfig, CompressionReport]:
    """Drop whole attention heads from one layer.

    Removes the dropped heads' column blocks from Wq/Wk/Wv and row blocks
    from Wo, so the layer's internal attention width shrinks while its
    input/output width stays d_model. Each dropped head removes exactly
    4 * d_model * head_width weight elements.
    """
    heads = cfg.heads_in_layer(layer)
    kept = sorted(set(keep))
    if not kept:
        raise ValueError("prune_heads: keep set must be non-empty")
    if kept[0] < 0 or kept[-1] >= heads:
        raise ValueError(f"prune_heads: head indices {kept} outside [0, {heads})")

    before = param_count_enumerated(p)
    dh = cfg.head_width
    lay = p.layers[layer]
    col_idx = np.concatenate([np.arange(h * dh, (h + 1) * dh) for h in kept])

    nl = LayerParams(
        wq=lay.wq[:, col_idx].copy(), wk=lay.wk[:, col_idx].copy(),
        wv=lay.wv[:, col_idx].copy(), wo=lay.wo[col_idx, :].copy(),
        w1=lay.w1.copy(), w2=lay.w2.copy(),
    )
    for _, bname in _LAYER_PAIRS:
        b = getattr(lay, bname)
        if b is not None:
            sliced = b[col_idx].copy() if bname in ("bq", "bk", "bv") else b.copy()
            setattr(nl, bname, sliced)
    layers = [nl if i == layer else lp for i, lp in enumerate(p.layers)]
    pruned = ParamSet(tok_emb=p.tok_emb, pos_emb=p.pos_emb, layers=layers)

    counts = [cfg.heads_in_layer(i) for i in range(cfg.n_layers)]
    counts[layer] = len(kept)
    if all(c == counts[0] for c in counts):
        # uniform again: fold into n_heads, pinning the head width explicitly
        # because d_model // n_heads no longer recovers it
        head_dim = None if counts[0] * dh == cfg.d_model and cfg.head_dim is None else dh
        new_cfg = replace(cfg, n_heads=counts[0], head_dim=head_dim, layer_heads=None)
    else:
        new_cfg = replace(cfg, head_dim=dh, layer_heads=tuple(counts))

    after = param_count_enumerated(pruned)
    report = CompressionReport(
        pass_name="prune-heads",
        params_before=before,
        params_after=after,
        bytes_before=8 * before,
        bytes_after=8 * after,
        sparsity=_sparsity(pruned),
        max_error=0.0,
    )
    return _freeze(pruned), new_cfg, report


def prune_layers(
    p: ParamSet, cfg: ModelConfig, keep_layers: list[int]
) -> tuple[ParamSet, ModelConfig, CompressionReport]:
    """Keep only the listed layers, re-indexed in order."""
    kept = list(keep_layers)
    if sorted(set(kept)) != kept:
        raise ValueError(f"prune_layers: keep_layers {kept} must be strictly increasing")
    if kept and (kept[0] < 0 or kept[-1] >= cfg.n_layers):
        raise ValueError(f"prune_layers: layer indices {kept} outside [0, {cfg.n_layers})")

    before = param_count_enumerated(p)
    pruned = ParamSet(tok_emb=p.tok_emb, pos_emb=p.pos_emb,
                      layers=[p.layers[i] for i in kept])
    if cfg.layer_heads is not None:
        remaining = tuple(cfg.layer_heads[i] for i in kept)
        if remaining and all(c == remaining[0] for c in remaining):
            new_cfg = replace(cfg, n_layers=len(kept), n_heads=remaining[0],
                              layer_heads=None)
        else:
            new_cfg = replace(cfg, n_layers=len(kept),
                              layer_heads=remaining if remaining else None)
    else:
        new_cfg = replace(cfg, n_layers=len(kept))

    after = param_count_enumerated(pruned)
    report = CompressionReport(
        pass_name="prune-layers",
        params_before=before,
        params_after=after,
        bytes_before=8 * before,
        bytes_after=8 * after,
        sparsity=_sparsity(pruned),
        max_error=0.0,
    )
    return _freeze(pruned), new_cfg, report


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_tensor(m: Matrix, bits: int = 8) -> QuantizedTensor:
    """Symmetric per-tensor int8 quantization.

    scale = max|m| / 127 (1.0 for an all-zero tensor); values are rounded
    half away from zero and clamped to [-127, 127], which bounds every
    element's reconstruction error by scale/2.
    """
    if bits != 8:
        raise ValueError(f"quantize_tensor: only 8-bit quantization is supported, got {bits}")
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ValueError(f"quantize_tensor: expected a 2-D tensor, got shape {a.shape}")

    peak = float(np.max(np.abs(a))) if a.size else 0.0
    if peak == 0.0:
        return QuantizedTensor(a.shape[0], a.shape[1], np.zeros(a.shape, np.int8), 1.0)

    scale = peak / 127.0
    # Stabilize so quantizing our own dequantized output reproduces the
    # identical scale: the requantize scale is (127*scale)/127, so iterate
    # to that mapping's fixed point (in practice zero or one step).
    for _ in range(4):
        again = (127.0 * scale) / 127.0
        if again == scale:
            break
        scale = again

    q = np.clip(_round_half_away(a / scale), -127, 127).astype(np.int8)
    return QuantizedTensor(a.shape[0], a.shape[1], q, scale)


def dequantize(q: QuantizedTensor) -> Matrix:
    return q.values.astype(np.float64) * q.scale


def quantize_params(p: ParamSet) -> list[tuple[str, QuantizedTensor]]:
    """Quantize every tensor of a ParamSet in canonical order."""
    return [(name, quantize_tensor(arr)) for name, arr in iter_params(p)]


def dequantize_params(p: ParamSet, quantized: list[tuple[str, QuantizedTensor]]) -> ParamSet:
    """Rebuild float64 params shaped like `p` from quantized tensors."""
    by_name = dict(quantized)
    expected = [name for name, _ in iter_params(p)]
    if list(by_name) != expected:
        raise ValueError("dequantize_params: tensor names do not match the canonical order")

    def restore(name: str, like: np.ndarray) -> np.ndarray:
        return dequantize(by_name[name]).reshape(like.shape)

    layers = []
    for i, lay in enumerate(p.layers):
        nl = LayerParams(wq=None, wk=None, wv=None, wo=None, w1=None, w2=None)  # type: ignore[arg-type]
        for wname, bname in _LAYER_PAIRS:
            setattr(nl, wname, restore(f"layers.{i}.{wname}", getattr(lay, wname)))
            if getattr(lay, bname) is not None:
                setattr(nl, bname, restore(f"layers.{i}.{bname}", getattr(lay, bname)))
        layers.append(nl)
    return _freeze(ParamSet(
        tok_emb=restore("tok_emb", p.tok_emb),
        pos_emb=restore("pos_emb", p.pos_emb),
        layers=layers,
    ))


def quantized_memory_bytes(p: ParamSet) -> int:
    """Storage cost of the fully int8-quantized ParamSet.

    One byte per parameter plus eight bytes per tensor for its scale.
    """
    tensors = 0
    params = 0
    for _, arr in iter_params(p):
        tensors += 1
        params += arr.size
    return params + 8 * tensors
