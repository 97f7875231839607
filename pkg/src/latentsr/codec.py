"""Fixed image <-> latent codec: block-mean encoder, bilinear decoder.

Images are 2-D float64 arrays in [0, 1]; latents live in [-1, 1] (zero-mean,
matching the terminal Gaussian of the diffusion chain). The pair is lossless
on content that is constant per latent cell, which is all the exactness the
pipeline's contracts need.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import InvalidInputError


def require_image(img, what: str = "image") -> np.ndarray:
    arr = np.ascontiguousarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"{what} must be 2-D, got shape {np.shape(img)}")
    if arr.size == 0:
        raise InvalidInputError(f"{what} is empty")
    lo, hi = float(arr.min()), float(arr.max())
    if lo < 0.0 or hi > 1.0:
        raise InvalidInputError(f"{what} values outside [0, 1]: min={lo}, max={hi}")
    return arr


@dataclass
class Latent:
    """Square latent grid plus the diffusion timestep it sits at (0 = clean)."""

    values: np.ndarray
    t: int = 0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise InvalidInputError(f"latent must be square 2-D, got {self.values.shape}")
        if self.t < 0:
            raise InvalidInputError(f"negative timestep {self.t}")

    @property
    def side(self) -> int:
        return self.values.shape[0]

    @property
    def size(self) -> int:
        return self.values.size


def encode(img, latent_side: int) -> Latent:
    """Block-mean downsample then map [0,1] -> [-1,1]; returns a t=0 latent."""
    arr = require_image(img)
    h, w = arr.shape
    if h != w:
        raise InvalidInputError(f"encode expects a square image, got {arr.shape}")
    if latent_side <= 0 or h % latent_side != 0:
        raise InvalidInputError(f"latent side {latent_side} does not divide image side {h}")
    means = kernels.block_mean(arr, h // latent_side)
    return Latent(2.0 * means - 1.0, t=0)


def decode(z: Latent, image_side: int) -> np.ndarray:
    """Map [-1,1] -> [0,1] with clamping, then bilinear upsample."""
    if image_side <= 0 or image_side % z.side != 0:
        raise InvalidInputError(f"image side {image_side} is not a multiple of latent side {z.side}")
    pix = np.clip((z.values + 1.0) / 2.0, 0.0, 1.0)
    out = kernels.bilinear_upsample(pix, image_side, image_side)
    # interpolation is convex up to rounding; clamp away any last-ulp overshoot
    return np.clip(out, 0.0, 1.0)
