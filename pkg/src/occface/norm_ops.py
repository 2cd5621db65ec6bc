"""Spatial feature transform and semantic region-adaptive normalization on (N, C, H, W) arrays."""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def _activation(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 4 or min(arr.shape) < 1:
        raise ShapeError(f"{name} must be a non-empty (N, C, H, W) array, got shape {arr.shape}")
    return arr


def _aligned(*pairs):
    arrs = [_activation(a, n) for a, n in pairs]
    shape = arrs[0].shape
    for arr, (_, name) in zip(arrs[1:], pairs[1:]):
        if arr.shape != shape:
            raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
    return arrs


def sft_apply(f, gamma, beta) -> np.ndarray:
    """Element-wise affine modulation ``gamma * f + beta``."""
    f, gamma, beta = _aligned((f, "features"), (gamma, "gamma"), (beta, "beta"))
    return gamma * f + beta


def channel_stats(z) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel batch mean and population std over (N, H, W).

    The variance is taken as ``E[z^2] - mu^2`` and floored at zero before the root.
    """
    z = _activation(z, "activation")
    mu = z.mean(axis=(0, 2, 3))
    var = (z * z).mean(axis=(0, 2, 3)) - mu * mu
    return mu, np.sqrt(np.maximum(var, 0.0))


def sean_apply(z, x, y, eps: float = 1e-5) -> np.ndarray:
    """``x * (z - mu_c) / (sigma_c + eps) + y`` with batch statistics of ``z``."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    z, x, y = _aligned((z, "activation"), (x, "scale map"), (y, "shift map"))
    mu, sigma = channel_stats(z)
    norm = (z - mu[None, :, None, None]) / (sigma[None, :, None, None] + eps)
    return x * norm + y
