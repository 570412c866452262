"""Gradient-map operator, SSIM/PSNR metrics, and the combined training objective.

Both loss terms have the form alpha * MSE - (1 - alpha) * SSIM; the total adds
the gradient-domain term with weight lam.  Everything here is built from the
differentiable primitives, so losses can sit at the end of a recorded tape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

GRAD_EPS = 1e-6


@dataclass
class LossConfig:
    alpha: float = 0.95
    lam: float = 0.5
    epsilon_grad: float = GRAD_EPS
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2


def gradient_map(img, eps=GRAD_EPS):
    """sqrt((dx I)^2 + (dy I)^2 + eps) with forward differences, replicate boundary."""
    img = img if isinstance(img, Tensor) else Tensor(img)
    dy = T.forward_diff(img, 0)
    dx = T.forward_diff(img, 1)
    return T.sqrt(T.square(dx) + T.square(dy) + eps)


def _gaussian_kernel(side, sigma, dtype):
    half = (side - 1) / 2.0
    coords = np.arange(side) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    k /= k.sum()
    return k.astype(dtype)[:, :, None, None]


def ssim(a, b, cfg: LossConfig = LossConfig()):
    """Mean of the Gaussian-windowed local SSIM map; inputs [h, w, 1] in [0, 1]."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    h, w = a.shape[-3], a.shape[-2]
    if h < cfg.ssim_window or w < cfg.ssim_window:
        raise ShapeError(f"ssim needs extents >= {cfg.ssim_window}, got {h}x{w}")
    kern = Tensor(_gaussian_kernel(cfg.ssim_window, cfg.ssim_sigma, a.dtype))
    zero_b = Tensor(np.zeros(1, dtype=a.data.dtype))

    def blur(x):
        return T.conv2d(x, kern, zero_b, stride=1, pad=0)

    mu_a = blur(a)
    mu_b = blur(b)
    mu_aa = mu_a * mu_a
    mu_bb = mu_b * mu_b
    mu_ab = mu_a * mu_b
    var_a = blur(a * a) - mu_aa
    var_b = blur(b * b) - mu_bb
    cov = blur(a * b) - mu_ab
    num = (2.0 * mu_ab + cfg.c1) * (2.0 * cov + cfg.c2)
    den = (mu_aa + mu_bb + cfg.c1) * (var_a + var_b + cfg.c2)
    return T.tmean(num / den)


def mse(a, b):
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = b if isinstance(b, Tensor) else Tensor(b)
    return T.tmean(T.square(a - b))


def psnr(a, b):
    """10 log10(1 / MSE) on unit dynamic range; +inf for identical images."""
    err = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def loss_in(i_out, i_gt, cfg: LossConfig = LossConfig()):
    return cfg.alpha * mse(i_out, i_gt) - (1.0 - cfg.alpha) * ssim(i_out, i_gt, cfg)


def loss_c(r_out, r_gt, cfg: LossConfig = LossConfig()):
    return cfg.alpha * mse(r_out, r_gt) - (1.0 - cfg.alpha) * ssim(r_out, r_gt, cfg)


def total_loss(i_out, r_out, i_gt, cfg: LossConfig = LossConfig()):
    """L = L_in + lam * L_c; the gradient target is derived from I_gt internally."""
    r_gt = gradient_map(i_gt, cfg.epsilon_grad)
    return loss_in(i_out, i_gt, cfg) + cfg.lam * loss_c(r_out, r_gt, cfg)
