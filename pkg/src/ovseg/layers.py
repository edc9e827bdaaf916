"""Transformer encoder layer primitives shared by the frozen stubs and the
trainable fusion module.

Layers are pre-norm: ``x + Attn(LN(x))`` followed by ``x + FFN(LN(x))``.
Parameters live in flat name->Tensor dicts so the same forward code serves
frozen (requires_grad=False) and trainable instances, and so checkpoints
can address every array by name.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigMismatch


def init_linear(rng: np.random.Generator, d_in: int, d_out: int, requires_grad: bool):
    std = np.sqrt(2.0 / (d_in + d_out))
    w = T.Tensor(rng.normal(0.0, std, size=(d_in, d_out)), requires_grad=requires_grad)
    b = T.Tensor(np.zeros(d_out), requires_grad=requires_grad)
    return w, b


def init_encoder_layer(
    rng: np.random.Generator, d: int, num_heads: int, mlp_ratio: int, requires_grad: bool
) -> dict[str, T.Tensor]:
    if d % num_heads != 0:
        raise ConfigMismatch(f"width {d} not divisible by {num_heads} heads")
    params: dict[str, T.Tensor] = {}
    for name in ("q", "k", "v", "o"):
        w, b = init_linear(rng, d, d, requires_grad)
        params[f"attn.{name}.w"] = w
        params[f"attn.{name}.b"] = b
    hidden = mlp_ratio * d
    params["ffn.w1"], params["ffn.b1"] = init_linear(rng, d, hidden, requires_grad)
    params["ffn.w2"], params["ffn.b2"] = init_linear(rng, hidden, d, requires_grad)
    for ln in ("ln1", "ln2"):
        params[f"{ln}.g"] = T.Tensor(np.ones(d), requires_grad=requires_grad)
        params[f"{ln}.b"] = T.Tensor(np.zeros(d), requires_grad=requires_grad)
    return params


def linear(x: T.Tensor, w: T.Tensor, b: T.Tensor) -> T.Tensor:
    """Affine map along the last axis of a rank-2 or rank-3 tensor."""
    if x.data.ndim == 2:
        return T.add_bias(T.matmul(x, w), b)
    bsz, n, d = x.shape
    flat = T.reshape(x, (bsz * n, d))
    out = T.add_bias(T.matmul(flat, w), b)
    return T.reshape(out, (bsz, n, w.shape[1]))


def mlp2(x: T.Tensor, w1: T.Tensor, b1: T.Tensor, w2: T.Tensor, b2: T.Tensor) -> T.Tensor:
    return linear(T.gelu(linear(x, w1, b1)), w2, b2)


def _heads_split(x: T.Tensor, num_heads: int) -> T.Tensor:
    bsz, n, d = x.shape
    dh = d // num_heads
    x = T.reshape(x, (bsz, n, num_heads, dh))
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (bsz * num_heads, n, dh))


def _heads_join(x: T.Tensor, bsz: int, num_heads: int) -> T.Tensor:
    _, n, dh = x.shape
    x = T.reshape(x, (bsz, num_heads, n, dh))
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (bsz, n, num_heads * dh))


def self_attention(
    x: T.Tensor,
    params: dict[str, T.Tensor],
    num_heads: int,
    attn_sink: list | None = None,
) -> T.Tensor:
    """Full multi-head self-attention over [B, N, d] token sequences."""
    bsz, n, d = x.shape
    dh = d // num_heads
    q = _heads_split(linear(x, params["attn.q.w"], params["attn.q.b"]), num_heads)
    k = _heads_split(linear(x, params["attn.k.w"], params["attn.k.b"]), num_heads)
    v = _heads_split(linear(x, params["attn.v.w"], params["attn.v.b"]), num_heads)
    scores = T.mul(T.bmm(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dh))
    attn = T.softmax(scores, axis=-1)
    if attn_sink is not None:
        attn_sink.append(attn.data.reshape(bsz, num_heads, n, n).copy())
    mixed = _heads_join(T.bmm(attn, v), bsz, num_heads)
    return linear(mixed, params["attn.o.w"], params["attn.o.b"])


def encoder_layer(
    x: T.Tensor,
    params: dict[str, T.Tensor],
    num_heads: int,
    attn_sink: list | None = None,
) -> T.Tensor:
    """Pre-norm transformer encoder layer on [B, N, d]."""
    h = T.layer_norm(x, params["ln1.g"], params["ln1.b"])
    x = T.add(x, self_attention(h, params, num_heads, attn_sink))
    h = T.layer_norm(x, params["ln2.g"], params["ln2.b"])
    return T.add(x, mlp2(h, params["ffn.w1"], params["ffn.b1"], params["ffn.w2"], params["ffn.b2"]))
