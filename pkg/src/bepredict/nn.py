"""Network building blocks: embeddings, multi-head self-attention encoder
stacks, a strided convolution trunk, and small MLP heads.

Attention uses a per-head projection width equal to the model width d, with
the H head outputs concatenated to width H*d before the output projection
back to d.  Encoder blocks are post-norm: LayerNorm is applied after each
residual sum.  The first block adds its attention output to the embedding
itself, so the embedding width d_e must equal d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import RngStream, ShapeMismatch, Tensor


@dataclass
class EncoderConfig:
    """Transformer encoder hyperparameters."""

    d_e: int = 124
    d: int = 124
    heads: int = 8
    blocks: int = 12
    ffn_hidden: int | None = None

    def __post_init__(self) -> None:
        if self.d_e != self.d:
            raise ShapeMismatch(
                f"first-block residual requires d_e == d, got d_e={self.d_e}, d={self.d}"
            )
        if min(self.d_e, self.d, self.heads, self.blocks) < 1:
            raise ShapeMismatch("encoder dimensions must be positive")
        if self.ffn_hidden is None:
            self.ffn_hidden = 2 * self.d


def xavier_uniform(rng: RngStream, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform((fan_in, fan_out), -bound, bound).astype(dtype)


def param_tensor(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingParams:
    token_table: Tensor    # (4, d_e)
    position_table: Tensor  # (t_max, d_e)


def init_embedding(d_e: int, t_max: int, rng: RngStream, dtype=np.float64) -> EmbeddingParams:
    scale = 1.0 / math.sqrt(d_e)
    return EmbeddingParams(
        token_table=param_tensor(rng.normal((4, d_e), scale).astype(dtype)),
        position_table=param_tensor(rng.normal((t_max, d_e), scale).astype(dtype)),
    )


def embed(one_hot: Tensor, params: EmbeddingParams) -> Tensor:
    """Token embedding plus position embedding: (..., T, 4) -> (..., T, d_e).

    T may be shorter than the position table (a prefix is used), never longer.
    """
    t = one_hot.shape[-2]
    t_max = params.position_table.shape[0]
    if t > t_max:
        raise ShapeMismatch(f"sequence length {t} exceeds position table {t_max}")
    tok = nc.matmul(one_hot, params.token_table)
    pos = nc.narrow(params.position_table, 0, 0, t)
    return nc.add(tok, pos)


# ---------------------------------------------------------------------------
# attention


@dataclass
class AttentionParams:
    w_query: list[Tensor]  # per head, (d_e, d)
    w_key: list[Tensor]
    w_value: list[Tensor]
    w_out: Tensor          # (heads * d, d)
    b_out: Tensor          # (d,)


def init_attention(d_e: int, d: int, heads: int, rng: RngStream, dtype=np.float64) -> AttentionParams:
    return AttentionParams(
        w_query=[param_tensor(xavier_uniform(rng, d_e, d, dtype)) for _ in range(heads)],
        w_key=[param_tensor(xavier_uniform(rng, d_e, d, dtype)) for _ in range(heads)],
        w_value=[param_tensor(xavier_uniform(rng, d_e, d, dtype)) for _ in range(heads)],
        w_out=param_tensor(xavier_uniform(rng, heads * d, d, dtype)),
        b_out=param_tensor(np.zeros(d, dtype=dtype)),
    )


def self_attention(u: Tensor, params: AttentionParams) -> Tensor:
    """Scaled dot-product self-attention over (..., T, d_e) -> (..., T, d).

    Per-head width equals d; head outputs are concatenated (width H*d) and
    projected back to d.  Attention weights are a softmax over key positions
    of q.k / sqrt(d).
    """
    heads = len(params.w_query)
    d = params.w_query[0].shape[1]
    t = u.shape[-2]
    lead = u.shape[:-2]

    # one fused projection per role: (..., T, d_e) @ (d_e, H*d)
    q = nc.matmul(u, nc.concat(params.w_query, axis=1))
    k = nc.matmul(u, nc.concat(params.w_key, axis=1))
    v = nc.matmul(u, nc.concat(params.w_value, axis=1))

    def split_heads(x: Tensor) -> Tensor:
        x = nc.reshape(x, lead + (t, heads, d))
        return nc.swapaxes(x, -3, -2)  # (..., H, T, d)

    q, k, v = split_heads(q), split_heads(k), split_heads(v)
    scores = nc.scale(nc.matmul(q, nc.swapaxes(k, -1, -2)), 1.0 / math.sqrt(d))
    weights = nc.softmax(scores, axis=-1)
    mixed = nc.matmul(weights, v)                      # (..., H, T, d)
    mixed = nc.swapaxes(mixed, -3, -2)                 # (..., T, H, d)
    mixed = nc.reshape(mixed, lead + (t, heads * d))
    return nc.add(nc.matmul(mixed, params.w_out), params.b_out)


def attention_weights(u: Tensor, params: AttentionParams) -> np.ndarray:
    """Per-head attention matrices (..., H, T, T); rows sum to 1."""
    heads = len(params.w_query)
    d = params.w_query[0].shape[1]
    t = u.shape[-2]
    lead = u.shape[:-2]
    q = nc.matmul(u, nc.concat(params.w_query, axis=1))
    k = nc.matmul(u, nc.concat(params.w_key, axis=1))
    q = nc.swapaxes(nc.reshape(q, lead + (t, heads, d)), -3, -2)
    k = nc.swapaxes(nc.reshape(k, lead + (t, heads, d)), -3, -2)
    scores = nc.scale(nc.matmul(q, nc.swapaxes(k, -1, -2)), 1.0 / math.sqrt(d))
    return nc.softmax(scores, axis=-1).data


# ---------------------------------------------------------------------------
# encoder blocks


@dataclass
class EncoderBlockParams:
    attention: AttentionParams
    ln1_scale: Tensor
    ln1_shift: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln2_scale: Tensor
    ln2_shift: Tensor


def init_encoder_block(cfg: EncoderConfig, rng: RngStream, dtype=np.float64) -> EncoderBlockParams:
    d, h = cfg.d, cfg.ffn_hidden
    return EncoderBlockParams(
        attention=init_attention(cfg.d_e, d, cfg.heads, rng, dtype),
        ln1_scale=param_tensor(np.ones(d, dtype=dtype)),
        ln1_shift=param_tensor(np.zeros(d, dtype=dtype)),
        ffn_w1=param_tensor(xavier_uniform(rng, d, h, dtype)),
        ffn_b1=param_tensor(np.zeros(h, dtype=dtype)),
        ffn_w2=param_tensor(xavier_uniform(rng, h, d, dtype)),
        ffn_b2=param_tensor(np.zeros(d, dtype=dtype)),
        ln2_scale=param_tensor(np.ones(d, dtype=dtype)),
        ln2_shift=param_tensor(np.zeros(d, dtype=dtype)),
    )


def encoder_block(
    u: Tensor,
    params: EncoderBlockParams,
    dropout_p: float = 0.0,
    train: bool = False,
    rng: RngStream | None = None,
) -> Tensor:
    """Post-norm block: LN(attn + u) then LN(ffn + hidden)."""
    a = self_attention(u, params.attention)
    a = nc.dropout(a, dropout_p, rng, train)
    h = nc.layer_norm(nc.add(a, u))
    h = nc.add(nc.mul(h, params.ln1_scale), params.ln1_shift)
    f = nc.relu(nc.add(nc.matmul(h, params.ffn_w1), params.ffn_b1))
    f = nc.add(nc.matmul(f, params.ffn_w2), params.ffn_b2)
    f = nc.dropout(f, dropout_p, rng, train)
    z = nc.layer_norm(nc.add(f, h))
    return nc.add(nc.mul(z, params.ln2_scale), params.ln2_shift)


@dataclass
class EncoderParams:
    config: EncoderConfig
    embedding: EmbeddingParams
    blocks: list[EncoderBlockParams]


def init_encoder(cfg: EncoderConfig, t_max: int, rng: RngStream, dtype=np.float64) -> EncoderParams:
    return EncoderParams(
        config=cfg,
        embedding=init_embedding(cfg.d_e, t_max, rng.spawn("embed"), dtype),
        blocks=[
            init_encoder_block(cfg, rng.spawn(f"block{i}"), dtype)
            for i in range(cfg.blocks)
        ],
    )


def encode(
    one_hot: Tensor,
    params: EncoderParams,
    dropout_p: float = 0.0,
    train: bool = False,
    rng: RngStream | None = None,
) -> Tensor:
    """Full encoder stack: (..., T, 4) one-hots -> (..., T, d) states."""
    u = embed(one_hot, params.embedding)
    for block in params.blocks:
        u = encoder_block(u, block, dropout_p, train, rng)
    return u


# ---------------------------------------------------------------------------
# convolution trunk and MLP heads


@dataclass
class ConvStackParams:
    weights: list[Tensor]  # each (kernel, c_in, c_out)
    biases: list[Tensor]


def init_conv_stack(
    channels: tuple[int, ...],
    rng: RngStream,
    dtype=np.float64,
    c_in: int = 4,
    kernel: int = 2,
) -> ConvStackParams:
    weights, biases = [], []
    for c_out in channels:
        w = rng.uniform(
            (kernel, c_in, c_out),
            -math.sqrt(6.0 / (kernel * c_in + c_out)),
            math.sqrt(6.0 / (kernel * c_in + c_out)),
        ).astype(dtype)
        weights.append(param_tensor(w))
        biases.append(param_tensor(np.zeros(c_out, dtype=dtype)))
        c_in = c_out
    return ConvStackParams(weights, biases)


def conv_trunk(x: Tensor, params: ConvStackParams) -> Tensor:
    """Apply the strided conv layers with ReLU, then flatten to features.

    (..., T, 4) -> (..., L_final * C_final) where each layer halves the
    length (odd tails dropped).
    """
    for w, b in zip(params.weights, params.biases):
        x = nc.relu(nc.conv1d(x, w, b))
    lead = x.shape[:-2]
    return nc.reshape(x, lead + (x.shape[-2] * x.shape[-1],))


def conv_output_length(t: int, layers: int, kernel: int = 2) -> int:
    for _ in range(layers):
        t //= kernel
    return t


@dataclass
class MlpHeadParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def init_mlp_head(
    in_features: int, hidden: int, out_features: int, rng: RngStream, dtype=np.float64
) -> MlpHeadParams:
    return MlpHeadParams(
        w1=param_tensor(xavier_uniform(rng, in_features, hidden, dtype)),
        b1=param_tensor(np.zeros(hidden, dtype=dtype)),
        w2=param_tensor(xavier_uniform(rng, hidden, out_features, dtype)),
        b2=param_tensor(np.zeros(out_features, dtype=dtype)),
    )


def mlp_head(
    x: Tensor,
    params: MlpHeadParams,
    dropout_p: float = 0.0,
    train: bool = False,
    rng: RngStream | None = None,
) -> Tensor:
    """Two-layer ReLU MLP followed by a softmax over the last axis."""
    h = nc.relu(nc.add(nc.matmul(x, params.w1), params.b1))
    h = nc.dropout(h, dropout_p, train=train, rng=rng)
    return nc.softmax(nc.add(nc.matmul(h, params.w2), params.b2), axis=-1)


# ---------------------------------------------------------------------------
# parameter traversal


def named_parameters(obj, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Flatten any nest of param dataclasses/lists/dicts into (name, tensor)
    pairs in a deterministic order."""
    if isinstance(obj, Tensor):
        return [(prefix, obj)]
    if isinstance(obj, EncoderConfig):
        return []
    out: list[tuple[str, Tensor]] = []
    if hasattr(obj, "__dataclass_fields__"):
        for name in obj.__dataclass_fields__:
            value = getattr(obj, name)
            out.extend(named_parameters(value, f"{prefix}.{name}" if prefix else name))
        return out
    if isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            out.extend(named_parameters(value, f"{prefix}[{i}]"))
        return out
    if isinstance(obj, dict):
        for key in sorted(obj):
            out.extend(named_parameters(obj[key], f"{prefix}[{key}]"))
        return out
    return []


def parameters(obj) -> list[Tensor]:
    return [t for _, t in named_parameters(obj)]
