"""Reconstruction metrics."""

from __future__ import annotations

import math

import numpy as np

from .errors import UndefinedMetricError


def masked_psnr(original, reconstructed, mask):
    """PSNR (peak 1) over non-masked pixels only.

    MSE = sum_{i,j,c} (I - I_hat)^2 * M_ij / (3 * sum_ij M_ij). Returns
    math.inf for an exact reconstruction on the mask support.
    """
    original = np.asarray(original, dtype=np.float64)
    reconstructed = np.asarray(reconstructed, dtype=np.float64)
    m = mask.mask if hasattr(mask, "mask") else np.asarray(mask, dtype=np.float64)
    count = m.sum()
    if count == 0:
        raise UndefinedMetricError("masked PSNR is undefined for an all-zero mask")
    sq = ((original - reconstructed) ** 2 * m[None]).sum()
    mse = sq / (3.0 * count)
    if mse == 0.0:
        return math.inf
    return float(10.0 * np.log10(1.0 / mse))
