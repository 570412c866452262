"""Synthetic paired-modality phantoms and dataset packaging.

Both modalities share one ellipse geometry; their intensities come from two
independent label-indexed lookup tables, so edges coincide while gray levels
are unrelated — the prior the cross-modality attention exploits.  Pairs are
stored as one CHFT file per field plus a plain-text manifest of sample ids.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import chft
from .losses import gradient_map
from .resample import degrade
from .tensor import Tensor

FIELDS = ("t2_lr", "t2_lr_grad", "t1_hr_grad", "t2_hr")


@dataclass
class PhantomSpec:
    seed: int = 0
    side: int = 96              # HR canvas side
    ellipses_min: int = 3
    ellipses_max: int = 8
    blur_sigma: float = 1.5
    noise_sigma: float = 0.0


@dataclass
class TrainingPair:
    t2_lr: np.ndarray       # [h, w, 1]
    t2_lr_grad: np.ndarray  # [h, w, 1]
    t1_hr_grad: np.ndarray  # [rh, rw, 1]
    t2_hr: np.ndarray       # [rh, rw, 1]


def _grad(img2d):
    return gradient_map(Tensor(img2d[:, :, None].astype(np.float64))).data


def synth_phantom(spec: PhantomSpec):
    """Deterministic per-seed (t1_hr, t2_hr) pair with shared geometry, [side, side] in [0, 1]."""
    rng = np.random.default_rng(spec.seed)
    s = spec.side
    n = int(rng.integers(spec.ellipses_min, spec.ellipses_max + 1)) if spec.ellipses_max > 0 else 0
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    labels = np.zeros((s, s), dtype=np.int64)
    for k in range(1, n + 1):
        cy, cx = rng.uniform(0.15 * s, 0.85 * s, 2)
        ay, ax = rng.uniform(0.08 * s, 0.35 * s, 2)
        theta = rng.uniform(0.0, np.pi)
        ry = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
        rx = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
        labels[(ry / ay) ** 2 + (rx / ax) ** 2 <= 1.0] = k
    images = []
    for _ in range(2):
        # spaced values in random order keep every region boundary contrasted
        lut = 0.1 + 0.8 * rng.permutation(n + 1) / max(n, 1)
        img = lut[labels]
        if spec.blur_sigma > 0:
            img = gaussian_filter(img, spec.blur_sigma, mode="reflect")
        if spec.noise_sigma > 0:
            img = img + rng.normal(0.0, spec.noise_sigma, img.shape)
        images.append(np.clip(img, 0.0, 1.0))
    t1_hr, t2_hr = images
    return t1_hr, t2_hr


def make_pair(spec: PhantomSpec, r: int) -> TrainingPair:
    t1_hr, t2_hr = synth_phantom(spec)
    t2_lr = degrade(t2_hr, r)
    return TrainingPair(
        t2_lr=t2_lr[:, :, None],
        t2_lr_grad=_grad(t2_lr),
        t1_hr_grad=_grad(t1_hr),
        t2_hr=t2_hr[:, :, None],
    )


def save_pair(directory, sample_id, pair: TrainingPair):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in FIELDS:
        chft.save_tensor(directory / f"{sample_id}.{name}.chft", getattr(pair, name))


def load_pair(directory, sample_id) -> TrainingPair:
    directory = Path(directory)
    return TrainingPair(**{
        name: chft.load_tensor(directory / f"{sample_id}.{name}.chft") for name in FIELDS
    })


def write_manifest(directory, sample_ids):
    Path(directory, "manifest.txt").write_text("".join(f"{sid}\n" for sid in sample_ids))


def read_manifest(directory):
    return Path(directory, "manifest.txt").read_text().split()


def generate_dataset(directory, n_samples, r, base_spec: PhantomSpec):
    """n_samples pairs with seeds base_seed .. base_seed + n - 1; returns the ids."""
    ids = []
    for i in range(n_samples):
        spec = PhantomSpec(seed=base_spec.seed + i, side=base_spec.side,
                           ellipses_min=base_spec.ellipses_min,
                           ellipses_max=base_spec.ellipses_max,
                           blur_sigma=base_spec.blur_sigma,
                           noise_sigma=base_spec.noise_sigma)
        sid = f"sample_{spec.seed:05d}"
        save_pair(directory, sid, make_pair(spec, r))
        ids.append(sid)
    write_manifest(directory, ids)
    return ids
