"""Guided MR image super-resolution with a cross-modality high-frequency transformer."""

from .tensor import Tape, Tensor, backward

__all__ = ["Tape", "Tensor", "backward"]
__version__ = "0.1.0"
