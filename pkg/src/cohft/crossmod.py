"""Point-wise adaptive instance normalization and inter-modality attention.

The reference stream (HR guidance gradients, [rh, rw, d]) is standardized to
zero mean / unit variance per channel, then re-dressed with the target
stream's channel moments plus spatially varying affine offsets beta and gamma
predicted from both streams.  The aligned map then serves as key/value source
for a basic attention step whose queries come from the target stream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, AttentionWeights, _uniform, _zeros, basic_attention, init_attention_weights
from .tensor import ShapeError, Tensor
from .windows import MLPWeights, init_mlp_weights, residual_mlp

IN_EPS = 1e-5


@dataclass
class AdaINWeights:
    expand_w: Tensor   # 1x1, d -> d r^2 (pre pixel-shuffle)
    expand_b: Tensor
    fuse_w: Tensor     # 3x3, 2d -> d
    fuse_b: Tensor
    beta_w: Tensor     # 3x3, d -> 1, zero-initialized
    beta_b: Tensor
    gamma_w: Tensor    # 3x3, d -> 1, zero-initialized
    gamma_b: Tensor


def init_adain_weights(d, r, rng, dtype=np.float64, safe_start=True):
    w = AdaINWeights(
        expand_w=_uniform(rng, (1, 1, d, d * r * r), d, dtype), expand_b=_zeros(d * r * r, dtype),
        fuse_w=_uniform(rng, (3, 3, 2 * d, d), 9 * 2 * d, dtype), fuse_b=_zeros(d, dtype),
        beta_w=_zeros((3, 3, d, 1), dtype), beta_b=_zeros(1, dtype),
        gamma_w=_zeros((3, 3, d, 1), dtype), gamma_b=_zeros(1, dtype),
    )
    if not safe_start:
        w.beta_w = _uniform(rng, (3, 3, d, 1), 9 * d, dtype)
        w.gamma_w = _uniform(rng, (3, 3, d, 1), 9 * d, dtype)
    return w


def channel_moments(x):
    """Per-channel spatial mean and sigma = sqrt(population variance + eps)."""
    mu = T.tmean(x, axis=(0, 1))
    var = T.tmean(T.square(x - mu), axis=(0, 1))
    sigma = T.sqrt(var + IN_EPS)
    return mu, sigma


def instance_standardize(x2):
    """Per channel: subtract the spatial mean, divide by sigma."""
    mu, sigma = channel_moments(x2)
    return (x2 - mu) / sigma


def compute_affine(x1, x2, weights: AdaINWeights, r):
    """Point-wise affine maps beta, gamma [rh, rw, 1] from the fused streams."""
    h, w, _ = x1.shape
    if x2.shape[-3] != r * h or x2.shape[-2] != r * w:
        raise ShapeError(f"compute_affine: x2 extents {x2.shape[-3]}x{x2.shape[-2]} "
                         f"do not equal r*{h} x r*{w} with r={r}")
    x1h = T.conv2d(x1, weights.expand_w, weights.expand_b, stride=1, pad=0)
    x1h = T.pixel_shuffle(x1h, r)
    xh = T.conv2d(T.concat([x2, x1h], axis=-1), weights.fuse_w, weights.fuse_b, stride=1, pad=1)
    beta = T.conv2d(xh, weights.beta_w, weights.beta_b, stride=1, pad=1)
    gamma = T.conv2d(xh, weights.gamma_w, weights.gamma_b, stride=1, pad=1)
    return beta, gamma


def adain_apply(x2_std, mu1, sigma1, beta, gamma):
    """O[x,y,j] = X2'[x,y,j] (sigma1[j] + gamma[x,y]) + mu1[j] + beta[x,y]."""
    return x2_std * (sigma1 + gamma) + mu1 + beta


def adain(x1, x2, weights: AdaINWeights, r):
    """Align x2's feature distribution to x1's, with point-wise affine residuals."""
    mu1, sigma1 = channel_moments(x1)
    x2_std = instance_standardize(x2)
    beta, gamma = compute_affine(x1, x2, weights, r)
    return adain_apply(x2_std, mu1, sigma1, beta, gamma)


@dataclass
class InterModalityWeights:
    adain: AdaINWeights
    attn: AttentionWeights
    mlp: MLPWeights


def init_inter_modality_weights(cfg: AttentionConfig, rng, dtype=np.float64, safe_start=True):
    return InterModalityWeights(
        adain=init_adain_weights(cfg.d, cfg.rho, rng, dtype, safe_start),
        attn=init_attention_weights(cfg, rng, dtype, safe_start),
        mlp=init_mlp_weights(cfg.d, rng, dtype, safe_start),
    )


def inter_modality_attention(x1, x2, weights: InterModalityWeights, cfg: AttentionConfig,
                             use_inter_head=True, use_adain=True):
    """AdaIN-align x2 toward x1, attend with rho = r registration, then residual MLP."""
    aligned = adain(x1, x2, weights.adain, cfg.rho) if use_adain else x2
    out = basic_attention(x1, aligned, weights.attn, cfg, use_inter_head=use_inter_head)
    return residual_mlp(out, weights.mlp)
