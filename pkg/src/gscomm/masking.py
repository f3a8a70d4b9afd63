"""CLS-attention foreground masking: per-head attention maps, binarization,
head-sum, bilinear upsampling, and mask application."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import bilinear_resize


@dataclass
class MaskParams:
    rho: float = 2e-3  # per-head binarization threshold
    final_threshold: float = 0.5  # applied to the upsampled head-sum

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be non-negative")
        if not 0 < self.final_threshold <= 1:
            raise ValueError("final_threshold must lie in (0, 1]")


@dataclass
class HeadAttentionMaps:
    """Per-head CLS-to-patch attention reshaped onto the patch grid."""

    maps: np.ndarray  # (heads, H/P, W/P), non-negative


@dataclass
class SemanticMask:
    mask: np.ndarray  # (H, W) in {0, 1}
    mask3: np.ndarray  # (3, H, W), every channel equals mask
    patch_weights: np.ndarray  # (T,) head-summed raw attention per patch
    patch_grid: tuple  # (H/P, W/P)


def cls_attention_maps(internals, config):
    """Extract row 1, columns 2..T+1 of each head's attention matrix."""
    if len(internals.s) != config.heads:
        raise ValueError(
            f"expected {config.heads} attention heads, got {len(internals.s)}"
        )
    gh, gw = config.grid
    t = config.num_patches
    maps = np.stack([s[0, 1 : t + 1].reshape(gh, gw) for s in internals.s])
    return HeadAttentionMaps(maps=maps)


def build_semantic_mask(maps, params, target):
    """Binarize per-head maps at rho, sum over heads, upsample, threshold."""
    h, w = target
    raw = maps.maps
    binarized = (raw > params.rho).astype(np.float64)
    summed = binarized.sum(axis=0)
    upsampled = bilinear_resize(summed, (h, w))
    mask = (upsampled > params.final_threshold).astype(np.float64)
    patch_weights = raw.sum(axis=0).reshape(-1)
    return SemanticMask(
        mask=mask,
        mask3=np.broadcast_to(mask, (3, h, w)).copy(),
        patch_weights=patch_weights,
        patch_grid=raw.shape[1:],
    )


def apply_mask(image, mask):
    """Hadamard product with the 3-channel mask; masked-out pixels become 0."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != mask.mask3.shape:
        raise ValueError(f"image shape {image.shape} vs mask shape {mask.mask3.shape}")
    return image * mask.mask3


def mask_from_array(mask2d):
    """Wrap a plain HxW binary array (e.g. a ground-truth mask) as a SemanticMask."""
    mask2d = (np.asarray(mask2d, dtype=np.float64) > 0.5).astype(np.float64)
    h, w = mask2d.shape
    return SemanticMask(
        mask=mask2d,
        mask3=np.broadcast_to(mask2d, (3, h, w)).copy(),
        patch_weights=np.zeros(0),
        patch_grid=(0, 0),
    )


def compute_mask(image, config, params, mask_params):
    """Full path: backbone forward -> CLS maps -> semantic mask."""
    from .vit import vit_forward

    _, internals = vit_forward(image, config, params)
    maps = cls_attention_maps(internals, config)
    return build_semantic_mask(maps, mask_params, (config.img_h, config.img_w))


def write_pbm(path, mask2d):
    """Export a binary mask as plain-text PBM (P1)."""
    mask2d = np.asarray(mask2d)
    h, w = mask2d.shape
    lines = [f"P1\n{w} {h}\n"]
    for row in mask2d:
        lines.append(" ".join("1" if v > 0.5 else "0" for v in row) + "\n")
    with open(path, "w") as fh:
        fh.writelines(lines)


def write_patch_weights_csv(path, patch_weights):
    with open(path, "w") as fh:
        fh.write("patch_index,weight\n")
        for i, wgt in enumerate(patch_weights):
            fh.write(f"{i},{wgt!r}\n")
