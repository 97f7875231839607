"""Image-quality metrics and the weighted composite reward.

PSNR (dB, MAX=1, capped), mean local SSIM over 7x7 uniform windows, a
fixed-weight random-convolution feature distance standing in for a learned
perceptual metric (reported as "lpips_proxy" everywhere), and the composite

    0.4 * psnr_term + 0.3 * ssim_term + 0.2 * perceptual_term + 0.1 * efficiency

with each term normalized into [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .backend import kernels
from .codec import require_image
from .errors import InvalidInputError
from .rng import Xoshiro256

PSNR_CAP_DB = 100.0
_MSE_CAP_FLOOR = 1e-10

SSIM_WINDOW = 7
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

REWARD_WEIGHT_PSNR = 0.4
REWARD_WEIGHT_SSIM = 0.3
REWARD_WEIGHT_PERCEPTUAL = 0.2
REWARD_WEIGHT_EFFICIENCY = 0.1

DEFAULT_PSNR_NORM_DB = 50.0
DEFAULT_PERCEPTUAL_NORM = 0.5

_PERCEPTUAL_WEIGHT_SEED = 0x1A7E57
_PERCEPTUAL_CHANNELS = 4


def _check_pair(a, b):
    ia = require_image(a, "first image")
    ib = require_image(b, "second image")
    if ia.shape != ib.shape:
        raise InvalidInputError(f"image shapes differ: {ia.shape} vs {ib.shape}")
    return ia, ib


def psnr(a, b) -> float:
    """10*log10(MAX^2/MSE) with MAX=1; returns the 100 dB cap for MSE < 1e-10.

    The MSE is a correctly-rounded mean (fsum) and the result is computed as
    -10*log10(mse): together these keep decade MSEs on exact dB values, e.g.
    MSE 0.01 -> exactly 20.0.
    """
    ia, ib = _check_pair(a, b)
    d = (ia - ib).ravel()
    mse = math.fsum((d * d).tolist()) / d.size
    if mse < _MSE_CAP_FLOOR:
        return PSNR_CAP_DB
    return -10.0 * math.log10(mse) + 0.0


def ssim(a, b) -> float:
    """Mean local SSIM over valid 7x7 uniform windows, dynamic range 1.

    Window moments are plain means (biased covariance), C1=(0.01)^2,
    C2=(0.03)^2. Symmetric in its arguments.
    """
    ia, ib = _check_pair(a, b)
    if min(ia.shape) < SSIM_WINDOW:
        raise InvalidInputError(
            f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {ia.shape}"
        )
    box = kernels.box_filter_valid
    mu_a = box(ia, SSIM_WINDOW)
    mu_b = box(ib, SSIM_WINDOW)
    var_a = box(ia * ia, SSIM_WINDOW) - mu_a * mu_a
    var_b = box(ib * ib, SSIM_WINDOW) - mu_b * mu_b
    cov = box(ia * ib, SSIM_WINDOW) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@lru_cache(maxsize=1)
def _perceptual_kernels():
    """Two fixed-seed 3x3 convolution banks (1->4 and 4->4 channels)."""
    rng = Xoshiro256(_PERCEPTUAL_WEIGHT_SEED)
    c = _PERCEPTUAL_CHANNELS
    k1 = rng.normal_array((c, 1, 3, 3)) / 3.0
    k2 = rng.normal_array((c, c, 3, 3)) / (3.0 * np.sqrt(c))
    k1.flags.writeable = False
    k2.flags.writeable = False
    return k1, k2


def _perceptual_features(img: np.ndarray):
    """Rectified conv features, unit-normalized per spatial position."""
    k1, k2 = _perceptual_kernels()
    f1 = kernels.relu_forward(kernels.conv2d_valid(img[None, :, :], k1))
    f2 = kernels.relu_forward(kernels.conv2d_valid(f1, k2))
    out = []
    for f in (f1, f2):
        norm = np.sqrt((f * f).sum(axis=0) + 1e-12)
        out.append(f / norm)
    return out


def perceptual_distance(a, b) -> float:
    """Deterministic perceptual proxy: mean squared difference of the
    unit-normalized feature maps, averaged over the two layers."""
    ia, ib = _check_pair(a, b)
    if min(ia.shape) < 5:  # two valid 3x3 convs
        raise InvalidInputError(f"images must be at least 5x5, got {ia.shape}")
    fa = _perceptual_features(ia)
    fb = _perceptual_features(ib)
    dists = [float(np.mean(((ua - ub) ** 2).sum(axis=0))) for ua, ub in zip(fa, fb)]
    return sum(dists) / len(dists)


@dataclass
class RewardBreakdown:
    """Raw metric values plus the weighted composite in [0, 1]."""

    psnr_db: float
    ssim: float
    perceptual: float
    efficiency: float
    composite: float


def composite_reward(
    psnr_db: float,
    ssim_value: float,
    perceptual: float,
    steps_used: int,
    total_steps: int,
    psnr_norm_db: float = DEFAULT_PSNR_NORM_DB,
    perceptual_norm: float = DEFAULT_PERCEPTUAL_NORM,
) -> RewardBreakdown:
    """Weighted composite of normalized quality terms and step efficiency.

    steps_used must lie in [1, total_steps]; efficiency is 1 - steps/T. The
    normalization divisors map observed desk-scale ranges into [0, 1] and are
    overridable per run.
    """
    if total_steps < 1:
        raise InvalidInputError(f"total_steps must be >= 1, got {total_steps}")
    if not 1 <= steps_used <= total_steps:
        raise InvalidInputError(f"steps_used {steps_used} outside [1, {total_steps}]")
    n_psnr = min(max(psnr_db / psnr_norm_db, 0.0), 1.0)
    n_ssim = min(max(ssim_value, 0.0), 1.0)
    n_perc = min(max(perceptual / perceptual_norm, 0.0), 1.0)
    efficiency = 1.0 - steps_used / total_steps
    composite = (
        REWARD_WEIGHT_PSNR * n_psnr
        + REWARD_WEIGHT_SSIM * n_ssim
        + REWARD_WEIGHT_PERCEPTUAL * (1.0 - n_perc)
        + REWARD_WEIGHT_EFFICIENCY * efficiency
    )
    return RewardBreakdown(
        psnr_db=float(psnr_db),
        ssim=float(ssim_value),
        perceptual=float(perceptual),
        efficiency=efficiency,
        composite=composite,
    )
