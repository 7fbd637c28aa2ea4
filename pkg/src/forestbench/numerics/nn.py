"""Transformer building blocks: masked softmax, layer norm, GELU, attention,
and the cross-entropy loss.

Masked softmax and cross-entropy are fused ops with hand-written backward
passes; fusing keeps masked probabilities exactly zero and keeps the -inf
scratch values used for masking out of the (finite-only) tensor graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from forestbench.errors import ConfigError, ShapeError
from forestbench.numerics.tensor import (
    Tensor,
    accumulate_grad,
    coerce,
    fused_op,
)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def masked_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Row softmax over the last axis with invalid positions forced to 0.

    `mask` is boolean, broadcastable to the logits shape; True marks valid
    positions. Rows are stabilized by subtracting the row max over valid
    entries. A fully masked row is a caller bug and raises.
    """
    logits = coerce(logits)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not m.any(axis=-1).all():
        raise ValueError("masked_softmax: fully masked row")
    x = np.where(m, logits.data, -np.inf)
    mx = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - mx)
    y = e / e.sum(axis=-1, keepdims=True)
    out = fused_op(y, (logits,), None, "masked_softmax")
    if out.requires_grad:

        def backward(g: np.ndarray) -> None:
            dot = np.sum(g * y, axis=-1, keepdims=True)
            accumulate_grad(logits, y * (g - dot))

        out._backward = backward
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / (var + eps).sqrt()
    return normed * gain + bias


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    x = coerce(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = fused_op(x.data * cdf, (x,), None, "gelu")
    if out.requires_grad:

        def backward(g: np.ndarray) -> None:
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
            accumulate_grad(x, g * (cdf + x.data * pdf))

        out._backward = backward
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return x @ w + b


@dataclass
class AttentionWeights:
    """Query/key/value/output projections of one attention block."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # [..., S, D] -> [..., heads, S, D/heads]
    lead = x.shape[:-2]
    s, d = x.shape[-2], x.shape[-1]
    x = x.reshape(*lead, s, heads, d // heads)
    n = x.ndim
    perm = tuple(range(n - 3)) + (n - 2, n - 3, n - 1)
    return x.transpose(perm)


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    weights: AttentionWeights,
    heads: int,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Scaled dot-product attention with per-head 1/sqrt(d/heads) scaling.

    `key_mask` is boolean; a 1-D mask of length seq_k bars keys globally,
    while a (seq_q, seq_k) mask expresses structured per-query visibility.
    Masked keys receive attention weight exactly 0, so their stored values
    can never influence the output.
    """
    d = q.shape[-1]
    if d % heads != 0:
        raise ConfigError(f"model width {d} is not divisible by {heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d:
        raise ShapeError(f"attention width mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value length mismatch: {k.shape} vs {v.shape}")
    seq_k = k.shape[-2]
    if key_mask is None:
        mask = np.ones(seq_k, dtype=bool)
    else:
        mask = np.asarray(key_mask, dtype=bool)
        if mask.shape[-1] != seq_k:
            raise ShapeError(f"key mask length {mask.shape} does not cover {seq_k} keys")

    dh = d // heads
    qh = _split_heads(linear(q, weights.wq, weights.bq), heads)
    kh = _split_heads(linear(k, weights.wk, weights.bk), heads)
    vh = _split_heads(linear(v, weights.wv, weights.bv), heads)
    scores = (qh @ kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    attn = masked_softmax(scores, mask)
    ctx = attn @ vh
    n = ctx.ndim
    perm = tuple(range(n - 3)) + (n - 2, n - 3, n - 1)
    ctx = ctx.transpose(perm)
    lead = ctx.shape[:-3]
    ctx = ctx.reshape(*lead, ctx.shape[-3], d)
    return linear(ctx, weights.wo, weights.bo)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore: int = 255) -> Tensor:
    """Mean negative log-softmax over non-ignored targets.

    `logits` is [n, K]; `targets` holds class indices in [0, K) or the
    `ignore` code. Ignored entries contribute neither loss nor gradient.
    """
    logits = coerce(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [n, K] logits, got {logits.shape}")
    t = np.asarray(targets)
    if t.shape != logits.shape[:-1]:
        raise ShapeError(f"targets shape {t.shape} does not match logits {logits.shape}")
    n, k = logits.shape
    valid = t != ignore
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("cross_entropy: every target is ignored")
    ti = t.astype(np.int64)
    if ((ti < 0) | (ti >= k))[valid].any():
        raise ValueError(f"cross_entropy: target outside [0, {k}) and not ignore={ignore}")

    x = logits.data
    mx = x.max(axis=-1, keepdims=True)
    z = x - mx
    ez = np.exp(z)
    sez = ez.sum(axis=-1, keepdims=True)
    lse = np.log(sez)[:, 0] + mx[:, 0]
    rows = np.arange(n)
    safe_t = np.where(valid, ti, 0)
    nll = lse - x[rows, safe_t]
    loss = float(nll[valid].sum()) / n_valid
    out = fused_op(np.float64(loss), (logits,), None, "cross_entropy")
    if out.requires_grad:

        def backward(g: np.ndarray) -> None:
            p = ez / sez
            p[rows, safe_t] -= 1.0
            p[~valid] = 0.0
            accumulate_grad(logits, p * (float(g) / n_valid))

        out._backward = backward
    return out
