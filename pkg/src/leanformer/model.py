"""Slimmed-down transformer encoder.

The stack is deliberately bare: token + learned position embeddings, then
per layer multi-head self-attention followed by a two-matrix feed-forward
block, with no residual connections, no layer normalization and (by
default) no biases. The output projection reuses the transposed token
embedding, so it adds no parameters. This is exactly the structure whose
parameter count the profiler reproduces byte-for-byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .numerics import Matrix, RngState, matmul, relu, rng_uniform_array, softmax_rows

INIT_LO = -0.05
INIT_HI = 0.05

# finite-differencing every parameter is quadratic-ish; keep it honest
GRAD_CHECK_MAX_PARAMS = 2000


@dataclass(frozen=True)
class ModelConfig:
    """All hyperparameters of one encoder instance.

    `head_dim` and `layer_heads` are only ever set on structurally pruned
    models (see the compression passes); freshly built configs leave them
    at None, meaning every layer runs `n_heads` heads of width
    `d_model // n_heads`.
    """

    vocab_size: int
    max_seq_len: int
    d_model: int
    n_heads: int
    d_ff: int
    n_layers: int
    use_bias: bool = False
    head_dim: int | None = None
    layer_heads: tuple[int, ...] | None = None

    def __post_init__(self):
        for name in ("vocab_size", "max_seq_len", "d_model", "n_heads", "d_ff"):
            if getattr(self, name) < 1:
                raise ValueError(f"ModelConfig: {name} must be >= 1, got {getattr(self, name)}")
        if self.n_layers < 0:
            raise ValueError(f"ModelConfig: n_layers must be >= 0, got {self.n_layers}")
        if self.head_dim is None:
            if self.d_model % self.n_heads != 0:
                raise ValueError(
                    f"ModelConfig: n_heads ({self.n_heads}) must divide d_model ({self.d_model})"
                )
        elif self.head_dim < 1:
            raise ValueError(f"ModelConfig: head_dim must be >= 1, got {self.head_dim}")
        if self.layer_heads is not None:
            if len(self.layer_heads) != self.n_layers:
                raise ValueError(
                    f"ModelConfig: layer_heads has {len(self.layer_heads)} entries "
                    f"for {self.n_layers} layers"
                )
            if any(h < 1 for h in self.layer_heads):
                raise ValueError("ModelConfig: every layer_heads entry must be >= 1")

    @property
    def head_width(self) -> int:
        return self.head_dim if self.head_dim is not None else self.d_model // self.n_heads

    def heads_in_layer(self, layer: int) -> int:
        if not 0 <= layer < self.n_layers:
            raise ValueError(f"layer index {layer} out of range [0, {self.n_layers})")
        return self.layer_heads[layer] if self.layer_heads is not None else self.n_heads

    def attn_width(self, layer: int) -> int:
        """Width of the Q/K/V projections in `layer` (equals d_model unless pruned)."""
        return self.heads_in_layer(layer) * self.head_width


# Shipped configurations. The two paper-* presets are the exhaustive-search
# reconstruction of the published 140,288 / 67,072 parameter pair; `tiny`
# is small enough to finite-difference and `small` is a quick training demo.
PRESETS: dict[str, ModelConfig] = {
    "paper-baseline": ModelConfig(vocab_size=3990, max_seq_len=10, d_model=32,
                                  n_heads=8, d_ff=128, n_layers=1),
    "paper-reduced": ModelConfig(vocab_size=3990, max_seq_len=10, d_model=16,
                                 n_heads=4, d_ff=64, n_layers=1),
    "tiny": ModelConfig(vocab_size=11, max_seq_len=4, d_model=4,
                        n_heads=2, d_ff=8, n_layers=1),
    "small": ModelConfig(vocab_size=50, max_seq_len=10, d_model=16,
                         n_heads=4, d_ff=64, n_layers=1),
}


@dataclass
class LayerParams:
    wq: Matrix
    wk: Matrix
    wv: Matrix
    wo: Matrix
    w1: Matrix
    w2: Matrix
    bq: np.ndarray | None = None
    bk: np.ndarray | None = None
    bv: np.ndarray | None = None
    bo: np.ndarray | None = None
    b1: np.ndarray | None = None
    b2: np.ndarray | None = None


@dataclass
class ParamSet:
    """Named parameter arrays of one model instance.

    Canonical order (used by serialization, enumeration and the gradient
    checker): tok_emb, pos_emb, then per layer wq, wk, wv, wo, w1, w2 with
    each bias immediately after its weight.
    """

    tok_emb: Matrix
    pos_emb: Matrix
    layers: list[LayerParams]


_LAYER_PAIRS = (("wq", "bq"), ("wk", "bk"), ("wv", "bv"),
                ("wo", "bo"), ("w1", "b1"), ("w2", "b2"))


def iter_params(p: ParamSet) -> Iterator[tuple[str, np.ndarray]]:
    """Yield (name, array) in canonical order, biases only when present."""
    yield "tok_emb", p.tok_emb
    yield "pos_emb", p.pos_emb
    for i, lay in enumerate(p.layers):
        for wname, bname in _LAYER_PAIRS:
            yield f"layers.{i}.{wname}", getattr(lay, wname)
            bias = getattr(lay, bname)
            if bias is not None:
                yield f"layers.{i}.{bname}", bias


def param_count_enumerated(p: ParamSet) -> int:
    """Element count summed over every stored array; the counting oracle."""
    return sum(arr.size for _, arr in iter_params(p))


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count; must agree with enumeration exactly.

    (V+S)*d for the embeddings, then per layer 4*d*w + 2*d*f where w is the
    layer's attention width (w == d unless heads were pruned), plus
    3*w + d + f + d bias elements when biases are enabled.
    """
    n = (cfg.vocab_size + cfg.max_seq_len) * cfg.d_model
    for layer in range(cfg.n_layers):
        w = cfg.attn_width(layer)
        n += 4 * cfg.d_model * w + 2 * cfg.d_model * cfg.d_ff
        if cfg.use_bias:
            n += 3 * w + cfg.d_model + cfg.d_ff + cfg.d_model
    return n


def _freeze(p: ParamSet) -> ParamSet:
    # parameters are immutable by contract; make accidental writes loud
    for _, arr in iter_params(p):
        arr.flags.writeable = False
    return p


def _init_uniform(cfg: ModelConfig, seed: int, lo: float, hi: float) -> ParamSet:
    state = RngState(seed)

    def draw(rows: int, cols: int) -> Matrix:
        nonlocal state
        m, state = rng_uniform_array(state, (rows, cols), lo, hi)
        return m

    d, f = cfg.d_model, cfg.d_ff
    tok = draw(cfg.vocab_size, d)
    pos = draw(cfg.max_seq_len, d)
    layers = []
    for layer in range(cfg.n_layers):
        w = cfg.attn_width(layer)
        lp = LayerParams(
            wq=draw(d, w), wk=draw(d, w), wv=draw(d, w),
            wo=draw(w, d), w1=draw(d, f), w2=draw(f, d),
        )
        if cfg.use_bias:
            lp.bq = np.zeros(w)
            lp.bk = np.zeros(w)
            lp.bv = np.zeros(w)
            lp.bo = np.zeros(d)
            lp.b1 = np.zeros(f)
            lp.b2 = np.zeros(d)
        layers.append(lp)
    return _freeze(ParamSet(tok_emb=tok, pos_emb=pos, layers=layers))


def init_params(cfg: ModelConfig, seed: int) -> ParamSet:
    """Fill every weight matrix from one SplitMix64 stream, uniform in [-0.05, 0.05).

    Matrices are filled row-major in canonical order; biases start at zero
    and draw nothing from the stream. Deterministic given (cfg, seed).
    """
    return _init_uniform(cfg, seed, INIT_LO, INIT_HI)


def embed(p: ParamSet, tokens: Sequence[int]) -> Matrix:
    """Token embedding plus learned position embedding, row per position."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size < 1:
        raise ValueError("embed: need a non-empty 1-D sequence of token ids")
    max_len = p.pos_emb.shape[0]
    vocab = p.tok_emb.shape[0]
    if ids.size > max_len:
        raise ValueError(f"embed: sequence length {ids.size} exceeds max_seq_len {max_len}")
    bad = np.where((ids < 0) | (ids >= vocab))[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"embed: token id {int(ids[i])} at position {i} outside [0, {vocab})")
    return p.tok_emb[ids] + p.pos_emb[: ids.size]


@dataclass
class AttentionTrace:
    q: Matrix
    k: Matrix
    v: Matrix
    weights: list[Matrix]  # one n x n matrix per head
    out: Matrix


@dataclass
class LayerTrace:
    attn: AttentionTrace
    ffn_hidden: Matrix
    ffn_out: Matrix


@dataclass
class ForwardTrace:
    """Every intermediate activation of one sequence's forward pass."""

    embedded: Matrix
    layers: list[LayerTrace]
    logits: Matrix


def trace_element_count(t: ForwardTrace) -> int:
    """Total activation elements held by a trace (the memory-accounting oracle)."""
    n = t.embedded.size + t.logits.size
    for lt in t.layers:
        n += lt.attn.q.size + lt.attn.k.size + lt.attn.v.size
        n += sum(w.size for w in lt.attn.weights)
        n += lt.attn.out.size + lt.ffn_hidden.size + lt.ffn_out.size
    return n


def attention_forward(
    p: ParamSet, layer: int, x: Matrix, heads: int
) -> tuple[Matrix, AttentionTrace]:
    """Bidirectional multi-head self-attention (no masking).

    Q, K, V are split column-wise into `heads` blocks; each block attends
    with scores scaled by 1/sqrt(head width), and the concatenated head
    outputs go through the output projection.
    """
    lay = p.layers[layer]
    d = lay.wq.shape[0]
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"attention_forward: input shape {tuple(x.shape)} does not match d_model {d}")
    width = lay.wq.shape[1]
    if heads < 1 or width % heads != 0:
        raise ValueError(f"attention_forward: {heads} heads do not divide attention width {width}")
    dh = width // heads

    q = matmul(x, lay.wq)
    k = matmul(x, lay.wk)
    v = matmul(x, lay.wv)
    if lay.bq is not None:
        q = q + lay.bq
        k = k + lay.bk
        v = v + lay.bv

    scale = 1.0 / math.sqrt(dh)
    weights = []
    head_outs = []
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        a = softmax_rows(matmul(q[:, cols], k[:, cols].T) * scale)
        weights.append(a)
        head_outs.append(matmul(a, v[:, cols]))
    concat = np.hstack(head_outs)
    out = matmul(concat, lay.wo)
    if lay.bo is not None:
        out = out + lay.bo
    return out, AttentionTrace(q=q, k=k, v=v, weights=weights, out=out)


def _ffn(p: ParamSet, layer: int, x: Matrix) -> tuple[Matrix, Matrix]:
    lay = p.layers[layer]
    if x.ndim != 2 or x.shape[1] != lay.w1.shape[0]:
        raise ValueError(f"ffn_forward: input shape {tuple(x.shape)} does not match d_model {lay.w1.shape[0]}")
    z = matmul(x, lay.w1)
    if lay.b1 is not None:
        z = z + lay.b1
    hidden = relu(z)
    out = matmul(hidden, lay.w2)
    if lay.b2 is not None:
        out = out + lay.b2
    return hidden, out


def ffn_forward(p: ParamSet, layer: int, x: Matrix) -> Matrix:
    """Position-wise feed-forward block: relu(x W1 + b1) W2 + b2."""
    return _ffn(p, layer, x)[1]


def model_forward(
    p: ParamSet, cfg: ModelConfig, batch: Sequence[Sequence[int]]
) -> tuple[list[Matrix], list[ForwardTrace]]:
    """Run the full encoder over a batch of token sequences.

    Returns one n x vocab logit matrix and one ForwardTrace per sequence.
    Layers compose as x <- ffn(attention(x)) with no residual paths; the
    logits are x against the transposed token embedding.
    """
    if len(batch) == 0:
        raise ValueError("model_forward: batch must be non-empty")
    logits_list = []
    traces = []
    for tokens in batch:
        x0 = embed(p, tokens)
        x = x0
        layer_traces = []
        for layer in range(cfg.n_layers):
            y, attn_trace = attention_forward(p, layer, x, cfg.heads_in_layer(layer))
            hidden, x = _ffn(p, layer, y)
            layer_traces.append(LayerTrace(attn=attn_trace, ffn_hidden=hidden, ffn_out=x))
        logits = matmul(x, p.tok_emb.T)
        logits_list.append(logits)
        traces.append(ForwardTrace(embedded=x0, layers=layer_traces, logits=logits))
    return logits_list, traces


def cross_entropy(logits: Matrix, targets: Sequence[int]) -> float:
    """Mean negative log-likelihood of the targets, one per logit row."""
    ids = np.asarray(targets, dtype=np.int64)
    if ids.ndim != 1 or ids.size != logits.shape[0]:
        raise ValueError(f"cross_entropy: {ids.size} targets for {logits.shape[0]} positions")
    vocab = logits.shape[1]
    if np.any((ids < 0) | (ids >= vocab)):
        bad = int(ids[np.argmax((ids < 0) | (ids >= vocab))])
        raise ValueError(f"cross_entropy: target id {bad} outside [0, {vocab})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(log_z - shifted[np.arange(ids.size), ids]))


def batch_loss(
    p: ParamSet,
    cfg: ModelConfig,
    batch: Sequence[Sequence[int]],
    targets: Sequence[Sequence[int]],
) -> float:
    """Mean cross-entropy over every position in the batch (no gradients)."""
    logits_list, _ = model_forward(p, cfg, batch)
    total = 0.0
    positions = 0
    for logits, tgt in zip(logits_list, targets):
        n = logits.shape[0]
        total += cross_entropy(logits, tgt) * n
        positions += n
    return total / positions


def _zero_grads(p: ParamSet) -> ParamSet:
    layers = []
    for lay in p.layers:
        g = LayerParams(
            wq=np.zeros_like(lay.wq), wk=np.zeros_like(lay.wk), wv=np.zeros_like(lay.wv),
            wo=np.zeros_like(lay.wo), w1=np.zeros_like(lay.w1), w2=np.zeros_like(lay.w2),
        )
        for _, bname in _LAYER_PAIRS:
            b = getattr(lay, bname)
            if b is not None:
                setattr(g, bname, np.zeros_like(b))
        layers.append(g)
    return ParamSet(tok_emb=np.zeros_like(p.tok_emb), pos_emb=np.zeros_like(p.pos_emb), layers=layers)


def loss_and_grads(
    p: ParamSet,
    cfg: ModelConfig,
    batch: Sequence[Sequence[int]],
    targets: Sequence[Sequence[int]],
) -> tuple[float, ParamSet]:
    """Batch loss and its full gradient via reverse-mode differentiation.

    The loss is the mean cross-entropy over every position in the batch;
    gradients carry the same averaging. The tied output projection sends
    gradient into tok_emb from both the logit matmul and the lookup.
    """
    if len(batch) != len(targets):
        raise ValueError(f"loss_and_grads: {len(batch)} sequences but {len(targets)} target rows")
    logits_list, traces = model_forward(p, cfg, batch)
    total_positions = sum(lg.shape[0] for lg in logits_list)
    grads = _zero_grads(p)

    total_loss = 0.0
    for logits, trace, tokens, tgt in zip(logits_list, traces, batch, targets):
        ids = np.asarray(tgt, dtype=np.int64)
        n = logits.shape[0]
        if ids.size != n:
            raise ValueError(f"loss_and_grads: {ids.size} targets for {n} positions")
        total_loss += cross_entropy(logits, ids) * n

        # d loss / d logits for the global position mean
        probs = softmax_rows(logits)
        dlogits = probs.copy()
        dlogits[np.arange(n), ids] -= 1.0
        dlogits /= total_positions

        # logits = x_final @ tok_emb^T  (tied output)
        x_final = trace.layers[-1].ffn_out if trace.layers else trace.embedded
        grads.tok_emb += dlogits.T @ x_final
        dx = dlogits @ p.tok_emb

        for layer in reversed(range(cfg.n_layers)):
            lay = p.layers[layer]
            g = grads.layers[layer]
            lt = trace.layers[layer]
            x_in = trace.layers[layer - 1].ffn_out if layer > 0 else trace.embedded

            # feed-forward: out = relu(y W1 + b1) W2 + b2
            hidden = lt.ffn_hidden
            y = lt.attn.out
            dhidden = dx @ lay.w2.T
            g.w2 += hidden.T @ dx
            if g.b2 is not None:
                g.b2 += dx.sum(axis=0)
            dz = dhidden * (hidden > 0)
            g.w1 += y.T @ dz
            if g.b1 is not None:
                g.b1 += dz.sum(axis=0)
            dy = dz @ lay.w1.T

            # attention output projection: y = concat(heads) @ Wo + bo
            heads = cfg.heads_in_layer(layer)
            width = lay.wq.shape[1]
            dh = width // heads
            s = 1.0 / math.sqrt(dh)

            head_outs = [lt.attn.weights[h] @ lt.attn.v[:, h * dh:(h + 1) * dh] for h in range(heads)]
            concat = np.hstack(head_outs)
            g.wo += concat.T @ dy
            if g.bo is not None:
                g.bo += dy.sum(axis=0)
            dconcat = dy @ lay.wo.T

            dq = np.zeros_like(lt.attn.q)
            dk = np.zeros_like(lt.attn.k)
            dv = np.zeros_like(lt.attn.v)
            for h in range(heads):
                cols = slice(h * dh, (h + 1) * dh)
                a = lt.attn.weights[h]
                d_out_h = dconcat[:, cols]
                da = d_out_h @ lt.attn.v[:, cols].T
                dv[:, cols] = a.T @ d_out_h
                # softmax rows: dS = A * (dA - rowsum(dA * A))
                dscores = a * (da - (da * a).sum(axis=1, keepdims=True))
                dq[:, cols] = dscores @ lt.attn.k[:, cols] * s
                dk[:, cols] = dscores.T @ lt.attn.q[:, cols] * s

            g.wq += x_in.T @ dq
            g.wk += x_in.T @ dk
            g.wv += x_in.T @ dv
            if g.bq is not None:
                g.bq += dq.sum(axis=0)
                g.bk += dk.sum(axis=0)
                g.bv += dv.sum(axis=0)
            dx = dq @ lay.wq.T + dk @ lay.wk.T + dv @ lay.wv.T

        # embedding lookup: rows of tok_emb and the first n rows of pos_emb
        ids_in = np.asarray(tokens, dtype=np.int64)
        np.add.at(grads.tok_emb, ids_in, dx)
        grads.pos_emb[: dx.shape[0]] += dx

    return total_loss / total_positions, grads


def train_step(
    p: ParamSet,
    cfg: ModelConfig,
    batch: Sequence[Sequence[int]],
    targets: Sequence[Sequence[int]],
    lr: float,
) -> tuple[ParamSet, float]:
    """One plain gradient-descent step; returns the new params and pre-update loss."""
    if lr < 0:
        raise ValueError(f"train_step: learning rate must be >= 0, got {lr}")
    loss, grads = loss_and_grads(p, cfg, batch, targets)
    if lr == 0:
        return p, loss

    new_layers = []
    for lay, g in zip(p.layers, grads.layers):
        nl = LayerParams(
            wq=lay.wq - lr * g.wq, wk=lay.wk - lr * g.wk, wv=lay.wv - lr * g.wv,
            wo=lay.wo - lr * g.wo, w1=lay.w1 - lr * g.w1, w2=lay.w2 - lr * g.w2,
        )
        for _, bname in _LAYER_PAIRS:
            b = getattr(lay, bname)
            if b is not None:
                setattr(nl, bname, b - lr * getattr(g, bname))
        new_layers.append(nl)
    new_p = ParamSet(
        tok_emb=p.tok_emb - lr * grads.tok_emb,
        pos_emb=p.pos_emb - lr * grads.pos_emb,
        layers=new_layers,
    )
    return _freeze(new_p), loss


def synth_copy_batch(
    seed: int, batch_size: int, seq_len: int, vocab_size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded copy-task batch: random token ids, targets equal inputs."""
    if batch_size < 1 or seq_len < 1:
        raise ValueError("synth_copy_batch: batch_size and seq_len must be >= 1")
    if vocab_size < 2:
        raise ValueError(f"synth_copy_batch: vocab_size must be >= 2, got {vocab_size}")
    u, _ = rng_uniform_array(RngState(seed), (batch_size, seq_len), 0.0, 1.0)
    inputs = np.floor(u * vocab_size).astype(np.int64)
    # floor can only hit vocab_size if u rounds to 1.0, which [0,1) excludes,
    # but clip anyway so the contract cannot drift
    np.clip(inputs, 0, vocab_size - 1, out=inputs)
    return inputs, inputs.copy()


def _flatten_params(p: ParamSet) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in iter_params(p)])


def _with_flat_params(template: ParamSet, flat: np.ndarray) -> ParamSet:
    """Rebuild a ParamSet shaped like `template` from a flat vector."""
    pos = 0

    def take(arr: np.ndarray) -> np.ndarray:
        nonlocal pos
        out = flat[pos: pos + arr.size].reshape(arr.shape).copy()
        pos += arr.size
        return out

    tok = take(template.tok_emb)
    pos_emb = take(template.pos_emb)
    layers = []
    for lay in template.layers:
        nl = LayerParams(wq=None, wk=None, wv=None, wo=None, w1=None, w2=None)  # type: ignore[arg-type]
        for wname, bname in _LAYER_PAIRS:
            setattr(nl, wname, take(getattr(lay, wname)))
            if getattr(lay, bname) is not None:
                setattr(nl, bname, take(getattr(lay, bname)))
        layers.append(nl)
    return ParamSet(tok_emb=tok, pos_emb=pos_emb, layers=layers)


def grad_check(cfg: ModelConfig, seed: int, eps: float) -> float:
    """Max relative error between backprop and central finite differences.

    Perturbs every parameter of a seeded model on a fixed copy-task batch.
    The check point is drawn wider than the real init, uniform in
    [-b, b) with b = 0.5 / max(1, n_layers): at the tiny [-0.05, 0.05)
    init scale the deeper gradients sit below the float64 noise floor of
    the difference quotient, while much hotter draws saturate the softmax
    and bury those gradients instead. Only feasible for small configs;
    raises if the model holds more than GRAD_CHECK_MAX_PARAMS parameters.
    """
    if eps <= 0:
        raise ValueError(f"grad_check: eps must be > 0, got {eps}")
    n_params = param_count(cfg)
    if n_params > GRAD_CHECK_MAX_PARAMS:
        raise ValueError(
            f"grad_check: config has {n_params} parameters, more than "
            f"{GRAD_CHECK_MAX_PARAMS}; use a smaller config"
        )
    bound = 0.5 / max(1, cfg.n_layers)
    p = _init_uniform(cfg, seed, -bound, bound)
    batch, targets = synth_copy_batch(seed, 2, min(cfg.max_seq_len, 4), cfg.vocab_size)

    _, grads = loss_and_grads(p, cfg, batch, targets)
    analytic = _flatten_params(grads)
    theta = _flatten_params(p)

    worst = 0.0
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + eps
        hi = batch_loss(_with_flat_params(p, bumped), cfg, batch, targets)
        bumped[i] = theta[i] - eps
        lo = batch_loss(_with_flat_params(p, bumped), cfg, batch, targets)
        numeric = (hi - lo) / (2 * eps)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
