"""Toy-scale vision Transformer: patch tokens + CLS token, pre-norm blocks,
and retained final-block attention internals for downstream masking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


@dataclass
class ViTConfig:
    patch_size: int = 8
    dim: int = 32
    blocks: int = 2
    heads: int = 4
    img_h: int = 32
    img_w: int = 32
    mlp_ratio: int = 4  # hidden width multiplier inside block MLPs

    def __post_init__(self):
        if self.img_h % self.patch_size or self.img_w % self.patch_size:
            raise ValueError("image extents must be multiples of the patch size")
        if self.dim % self.heads:
            raise ValueError("token dimension must be divisible by the head count")

    @property
    def num_patches(self):
        return (self.img_h // self.patch_size) * (self.img_w // self.patch_size)

    @property
    def grid(self):
        return (self.img_h // self.patch_size, self.img_w // self.patch_size)

    @property
    def head_dim(self):
        return self.dim // self.heads


@dataclass
class AttentionInternals:
    """Per-head Q, K and row-stochastic attention matrices of one block."""

    q: list = field(default_factory=list)  # each (T+1, C/heads)
    k: list = field(default_factory=list)
    s: list = field(default_factory=list)  # each (T+1, T+1)


def patchify(image, patch_size):
    """Split a 3xHxW image into T raster-order patch vectors of length 3*P*P."""
    image = np.asarray(image, dtype=np.float64)
    c, h, w = image.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"extents {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    patches = (
        image.reshape(c, gh, p, gw, p).transpose(1, 3, 0, 2, 4).reshape(gh * gw, c * p * p)
    )
    return patches


def unpatchify(patches, patch_size, img_h, img_w, channels=3):
    """Exact inverse of patchify."""
    p = patch_size
    gh, gw = img_h // p, img_w // p
    return (
        np.asarray(patches, dtype=np.float64)
        .reshape(gh, gw, channels, p, p)
        .transpose(2, 0, 3, 1, 4)
        .reshape(channels, img_h, img_w)
    )


def init_vit_params(config, rng, learnable=True, prefix=""):
    """Fresh parameter dict for one backbone."""

    def make(shape, scale=0.02):
        return Parameter(rng.normal(0.0, scale, size=shape), learnable=learnable)

    p = {}
    c = config.dim
    p[prefix + "patch_embed.kernel"] = make((c, 3, config.patch_size, config.patch_size))
    p[prefix + "patch_embed.bias"] = Parameter(np.zeros(c), learnable=learnable)
    p[prefix + "cls_token"] = make((c,))
    p[prefix + "pos_embed"] = make((config.num_patches, c))
    hidden = config.mlp_ratio * c
    for u in range(config.blocks):
        b = f"{prefix}blk{u}."
        p[b + "wq"] = make((c, c))
        p[b + "wk"] = make((c, c))
        p[b + "wv"] = make((c, c))
        p[b + "wo"] = make((c, c))
        p[b + "mlp1.w"] = make((c, hidden))
        p[b + "mlp1.b"] = Parameter(np.zeros(hidden), learnable=learnable)
        p[b + "mlp2.w"] = make((hidden, c))
        p[b + "mlp2.b"] = Parameter(np.zeros(c), learnable=learnable)
    return p


def vit_forward(image, config, params, prefix=""):
    """Run the backbone; returns ((T+1)xC token Tensor, final-block internals)."""
    image = image if isinstance(image, Tensor) else Tensor(image)
    if image.data.shape != (3, config.img_h, config.img_w):
        raise ValueError(
            f"image shape {image.data.shape} does not match config "
            f"(3, {config.img_h}, {config.img_w})"
        )
    c = config.dim
    t = config.num_patches

    emb = ad.conv2d(
        image,
        params[prefix + "patch_embed.kernel"].value,
        stride=config.patch_size,
        padding=0,
    )
    patch_tokens = emb.reshape(c, t).T + params[prefix + "patch_embed.bias"].value
    patch_tokens = patch_tokens + params[prefix + "pos_embed"].value
    cls = params[prefix + "cls_token"].value.reshape(1, c)
    x = ad.concat([cls, patch_tokens], axis=0)

    d = config.head_dim
    scale = 1.0 / np.sqrt(d)
    internals = None
    for u in range(config.blocks):
        b = f"{prefix}blk{u}."
        h = ad.layernorm(x)
        heads = []
        last = u == config.blocks - 1
        if last:
            internals = AttentionInternals()
        for m in range(config.heads):
            cols = (slice(None), slice(m * d, (m + 1) * d))
            q = h @ params[b + "wq"].value[cols]
            k = h @ params[b + "wk"].value[cols]
            v = h @ params[b + "wv"].value[cols]
            s = ad.softmax((q @ k.T) * scale)
            heads.append(s @ v)
            if last:
                internals.q.append(q.data.copy())
                internals.k.append(k.data.copy())
                internals.s.append(s.data.copy())
        x = x + ad.concat(heads, axis=1) @ params[b + "wo"].value
        h2 = ad.layernorm(x)
        mlp = ad.affine(
            ad.relu(ad.affine(h2, params[b + "mlp1.w"].value, params[b + "mlp1.b"].value)),
            params[b + "mlp2.w"].value,
            params[b + "mlp2.b"].value,
        )
        x = x + mlp
    return x, internals


class ViT:
    """Backbone bundling a config with its parameter dict."""

    def __init__(self, config, rng=None, learnable=True, params=None):
        self.config = config
        if params is None:
            if rng is None:
                rng = np.random.default_rng(0)
            params = init_vit_params(config, rng, learnable=learnable)
        self.params = params

    def forward(self, image):
        return vit_forward(image, self.config, self.params)
