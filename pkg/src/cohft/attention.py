"""Basic attention: tokenization, intra-head and inter-head correlation, residual output.

The module enhances an input feature map X1 [h1, w1, d] with context gathered
from a reference map X2 [h2, w2, d] (possibly X1 itself).  Both maps are
embedded and unfolded into N = h1 w1 / p^2 tokens; M heads of scaled
dot-product attention renew the value tokens, an inter-head correlation matrix
remixes the heads, and the folded result is post-processed by a 3x3 conv and
added back to X1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class AttentionConfig:
    d: int           # embedding channels
    M: int           # head count
    p: int = 1       # patch side for tokenization
    rho: int = 1     # spatial registration ratio h2/h1 = w2/w1

    def __post_init__(self):
        if self.d * self.p * self.p % self.M:
            raise ShapeError(f"d*p^2 = {self.d * self.p * self.p} not divisible by M = {self.M}")
        if self.rho < 1:
            raise ShapeError(f"rho must be a positive integer, got {self.rho}")

    @property
    def d_prime(self):
        return self.d * self.p * self.p // self.M


@dataclass
class EmbedWeights:
    pre_gain: Tensor
    pre_shift: Tensor
    conv_w: Tensor
    conv_b: Tensor
    post_gain: Tensor
    post_shift: Tensor


@dataclass
class AttentionWeights:
    embed1: EmbedWeights   # 1x1 conv path for X1
    embed2: EmbedWeights   # rho x rho stride-rho conv path for X2
    wq: Tensor             # [M, d p^2, d']
    bq: Tensor             # [M, d']
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    out_w: Tensor          # 3x3 conv, zero-initialized for a safe start
    out_b: Tensor


def _uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def _init_embed(d, k, rng, dtype):
    return EmbedWeights(
        pre_gain=_ones(d, dtype), pre_shift=_zeros(d, dtype),
        conv_w=_uniform(rng, (k, k, d, d), k * k * d, dtype),
        conv_b=_zeros(d, dtype),
        post_gain=_ones(d, dtype), post_shift=_zeros(d, dtype),
    )


def init_attention_weights(cfg: AttentionConfig, rng, dtype=np.float64, safe_start=True):
    dp2 = cfg.d * cfg.p * cfg.p
    dp = cfg.d_prime
    w = AttentionWeights(
        embed1=_init_embed(cfg.d, 1, rng, dtype),
        embed2=_init_embed(cfg.d, cfg.rho, rng, dtype),
        wq=_uniform(rng, (cfg.M, dp2, dp), dp2, dtype), bq=_zeros((cfg.M, dp), dtype),
        wk=_uniform(rng, (cfg.M, dp2, dp), dp2, dtype), bk=_zeros((cfg.M, dp), dtype),
        wv=_uniform(rng, (cfg.M, dp2, dp), dp2, dtype), bv=_zeros((cfg.M, dp), dtype),
        out_w=_zeros((3, 3, cfg.d, cfg.d), dtype), out_b=_zeros(cfg.d, dtype),
    )
    if not safe_start:
        w.out_w = _uniform(rng, (3, 3, cfg.d, cfg.d), 9 * cfg.d, dtype)
    return w


def tokenize(x, weights: AttentionWeights, cfg: AttentionConfig, which):
    """LN -> embedding conv -> LN -> GELU -> unfold(p); returns [.., N, d p^2].

    The input path uses a 1x1 conv; the reference path registers the spatial
    extents with a rho x rho conv of stride rho (degenerating to 1x1 at rho=1).
    """
    h, w = x.shape[-3], x.shape[-2]
    if which == "input":
        emb, k, stride = weights.embed1, 1, 1
    elif which == "reference":
        emb, k, stride = weights.embed2, cfg.rho, cfg.rho
        if h % cfg.rho or w % cfg.rho:
            raise ShapeError(f"reference extents h={h}, w={w} not divisible by rho={cfg.rho}")
        h, w = h // cfg.rho, w // cfg.rho
    else:
        raise ValueError(f"which must be 'input' or 'reference', got {which!r}")
    if h % cfg.p or w % cfg.p:
        raise ShapeError(f"registered extents h={h}, w={w} not divisible by p={cfg.p}")
    y = T.layer_norm(x, emb.pre_gain, emb.pre_shift)
    y = T.conv2d(y, emb.conv_w, emb.conv_b, stride=stride, pad=0)
    y = T.layer_norm(y, emb.post_gain, emb.post_shift)
    y = T.gelu(y)
    return T.unfold(y, cfg.p)


def intra_head_correlation(q, k):
    """Row-stochastic token affinity: softmax_j(q_i . k_j / sqrt(d'))."""
    d_prime = q.shape[-1]
    logits = T.einsum("nd,md->nm", q, k)
    return T.softmax(logits * (1.0 / np.sqrt(d_prime)), axis=-1)


def renew_values(s, v):
    """Each output row is the s-weighted combination of value rows."""
    return T.einsum("nm,md->nd", s, v)


def _stack_heads(vhats):
    return T.concat([T.reshape(v, (1,) + tuple(v.shape)) for v in vhats], axis=0)


def inter_head_correlation(vhats):
    """Per-token head-to-head affinity [N, M, M]; logits are unscaled dot products."""
    v = _stack_heads(vhats)  # [M, N, d']
    logits = T.einsum("ind,jnd->nij", v, v)
    return T.softmax(logits, axis=-1)


def mix_heads(vhats, a):
    """u^(m)_n = sum_j (1 + A[n,m,j]) vhat^(j)_n; returns M tensors [N, d']."""
    v = _stack_heads(vhats)  # [M, N, d']
    mixed = T.einsum("nmj,jnd->mnd", a, v) + T.tsum(v, axis=0, keepdims=True)
    return [T.take0(mixed, m) for m in range(v.shape[0])]


def _heads_linear(tokens, w, b):
    # tokens [.., N, D], w [M, D, d'], b [M, d'] -> [.., M, N, d']
    proj = T.einsum("...nd,mde->...mne", tokens, w)
    return proj + T.reshape(b, (b.shape[0], 1, b.shape[1]))


def basic_attention(x1, x2, weights: AttentionWeights, cfg: AttentionConfig,
                    use_inter_head=True):
    """Full basic attention block; output has X1's shape.

    Accepts leading batch axes on x1/x2 (used for per-window evaluation with
    shared weights).
    """
    h1, w1 = x1.shape[-3], x1.shape[-2]
    t1 = tokenize(x1, weights, cfg, "input")
    t2 = tokenize(x2, weights, cfg, "reference")
    if t1.shape[-2] != t2.shape[-2]:
        raise ShapeError(f"token counts differ after registration: {t1.shape[-2]} vs {t2.shape[-2]}")
    q = _heads_linear(t1, weights.wq, weights.bq)
    k = _heads_linear(t2, weights.wk, weights.bk)
    v = _heads_linear(t2, weights.wv, weights.bv)
    s = T.softmax(T.einsum("...mne,...mke->...mnk", q, k) * (1.0 / np.sqrt(cfg.d_prime)),
                  axis=-1)
    vhat = T.einsum("...mnk,...mke->...mne", s, v)
    if use_inter_head:
        logits = T.einsum("...ine,...jne->...nij", vhat, vhat)
        a = T.softmax(logits, axis=-1)
        mixed = T.einsum("...nmj,...jne->...mne", a, vhat) + T.tsum(vhat, axis=-3, keepdims=True)
    else:
        mixed = vhat
    nb = mixed.ndim - 3
    perm = tuple(range(nb)) + (nb + 1, nb, nb + 2)
    tokens_out = T.transpose(mixed, perm)  # [.., N, M, d']
    tokens_out = T.reshape(tokens_out, tokens_out.shape[:-2] + (cfg.d * cfg.p * cfg.p,))
    folded = T.fold(tokens_out, cfg.p, h1, w1)
    return x1 + T.conv2d(folded, weights.out_w, weights.out_b, stride=1, pad=1)
