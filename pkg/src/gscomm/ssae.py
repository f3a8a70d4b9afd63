"""Semantic autoencoder: CNN encoder/decoder around a sigmoid-bounded,
N-bit-quantized latent, plus the patch refinement path (selection by
attention weight and reconstruction error, K-means palette, RLE)."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Parameter, Tensor
from .checkpoint import load_params, save_params
from .errors import CorruptFrameError
from .vit import patchify


@dataclass
class SSAEConfig:
    latent_channels: int = 4  # C_o
    downs: int = 3  # D
    bits: int = 8  # N
    stem_channels: int = 32

    def __post_init__(self):
        if not 1 <= self.bits <= 16:
            raise ValueError("bits must lie in [1, 16]")
        if self.downs < 0 or self.latent_channels < 1:
            raise ValueError("invalid channel/downs configuration")

    @property
    def compression_ratio(self):
        return Fraction(self.latent_channels, 4**self.downs * 3)

    def latent_shape(self, img_h, img_w):
        f = 2**self.downs
        if img_h % f or img_w % f:
            raise ValueError(f"extents {img_h}x{img_w} not divisible by 2^{self.downs}")
        return (self.latent_channels, img_h // f, img_w // f)


@dataclass
class QuantizedLatent:
    levels: np.ndarray  # integer levels in [0, 2^N - 1]
    bits: int


def quantize(values, bits):
    """Map [0,1] reals to N-bit integer levels (round-to-nearest)."""
    scale = (1 << bits) - 1
    levels = np.rint(np.asarray(values, dtype=np.float64) * scale).astype(np.int64)
    return QuantizedLatent(levels=np.clip(levels, 0, scale), bits=bits)


def dequantize(quantized):
    scale = (1 << quantized.bits) - 1
    if quantized.levels.min() < 0 or quantized.levels.max() > scale:
        raise CorruptFrameError(f"quantized level out of range for {quantized.bits} bits")
    return quantized.levels.astype(np.float64) / scale


def init_ssae_params(config, rng, learnable=True):
    s = config.stem_channels

    def conv(c_out, c_in):
        scale = np.sqrt(2.0 / (c_in * 9))
        return Parameter(rng.normal(0, scale, (c_out, c_in, 3, 3)), learnable=learnable)

    def bias(c):
        return Parameter(np.zeros(c), learnable=learnable)

    p = {"enc.stem.k": conv(s, 3), "enc.stem.b": bias(s)}
    for d in range(config.downs):
        p[f"enc.down{d}.k"] = conv(s, s)
        p[f"enc.down{d}.b"] = bias(s)
    p["enc.out.k"] = conv(config.latent_channels, s)
    p["enc.out.b"] = bias(config.latent_channels)
    p["dec.in.k"] = conv(s, config.latent_channels)
    p["dec.in.b"] = bias(s)
    for d in range(config.downs):
        p[f"dec.up{d}.k"] = conv(s, s)
        p[f"dec.up{d}.b"] = bias(s)
    p["dec.out.k"] = conv(3, s)
    p["dec.out.b"] = bias(3)
    return p


class SSAE:
    """Encoder/decoder pair; encode and decode operate on 3D images or 4D batches."""

    def __init__(self, config, rng=None, params=None):
        self.config = config
        if params is None:
            if rng is None:
                rng = np.random.default_rng(0)
            params = init_ssae_params(config, rng)
        self.params = params
        s = config.stem_channels
        self.bn = {"enc.stem": BatchNormState(s)}
        for d in range(config.downs):
            self.bn[f"enc.down{d}"] = BatchNormState(s)
        self.bn["dec.in"] = BatchNormState(s)
        for d in range(config.downs):
            self.bn[f"dec.up{d}"] = BatchNormState(s)

    def _block(self, x, name, training):
        b = self.params[name + ".b"].value
        shape = (1, -1, 1, 1) if x.data.ndim == 4 else (-1, 1, 1)
        x = ad.conv2d(x, self.params[name + ".k"].value, stride=1, padding=1)
        x = x + b.reshape(shape)
        key = name.rsplit(".", 1)[0] if name.endswith(".k") else name
        return ad.relu(ad.batchnorm(x, self.bn[key], training=training))

    def encode(self, image, training=False):
        """Image(s) -> latent Tensor in [0,1]."""
        x = image if isinstance(image, Tensor) else Tensor(image)
        h, w = x.data.shape[-2:]
        self.config.latent_shape(h, w)  # validates divisibility
        x = self._block(x, "enc.stem", training)
        for d in range(self.config.downs):
            x = self._block(ad.maxpool2(x), f"enc.down{d}", training)
        shape = (1, -1, 1, 1) if x.data.ndim == 4 else (-1, 1, 1)
        x = ad.conv2d(x, self.params["enc.out.k"].value, stride=1, padding=1)
        x = x + self.params["enc.out.b"].value.reshape(shape)
        return ad.sigmoid(x)

    def encode_quantize(self, image):
        """Inference path: encode and quantize one image."""
        latent = self.encode(image, training=False).data
        return latent, quantize(latent, self.config.bits)

    def decode_latent(self, latent, training=False):
        """Latent Tensor/array -> reconstructed image Tensor in [0,1]."""
        x = latent if isinstance(latent, Tensor) else Tensor(latent)
        x = self._block(x, "dec.in", training)
        for d in range(self.config.downs):
            x = self._block(ad.upsample_nearest2(x), f"dec.up{d}", training)
        shape = (1, -1, 1, 1) if x.data.ndim == 4 else (-1, 1, 1)
        x = ad.conv2d(x, self.params["dec.out.k"].value, stride=1, padding=1)
        x = x + self.params["dec.out.b"].value.reshape(shape)
        return ad.sigmoid(x)

    def decode(self, quantized):
        """Receiver path: dequantize and decode one QuantizedLatent."""
        return self.decode_latent(dequantize(quantized), training=False).data

    def train_step(self, images, masks3, lr):
        """One step on a batch of (image, 3-channel mask) pairs.

        Encoder and decoder are connected directly (no quantization, no
        channel); loss is the mean masked Frobenius norm of the residual.
        """
        batch = np.stack([np.asarray(im, dtype=np.float64) for im in images])
        latent = self.encode(Tensor(batch), training=True)
        recon = self.decode_latent(latent, training=True)
        residual = Tensor(batch) - recon
        total = None
        for i, m3 in enumerate(masks3):
            term = ad.masked_frobenius_norm(residual[i], np.asarray(m3, dtype=np.float64))
            total = term if total is None else total + term
        loss = total / len(images)
        loss.backward()
        ad.sgd_step(self.params.values(), lr)
        ad.zero_grads(self.params.values())
        return loss.item()

    # -- checkpointing (parameters + batchnorm running statistics) --

    def _full_params(self):
        full = dict(self.params)
        for name, st in self.bn.items():
            full[f"bn.{name}"] = Parameter(
                np.stack([st.running_mean, st.running_var]), learnable=False
            )
        return full

    def save(self, path):
        save_params(path, self._full_params())

    def load(self, path):
        full = self._full_params()
        load_params(path, full)
        for name, p in full.items():
            if name.startswith("bn."):
                st = self.bn[name[3:]]
                st.running_mean = p.value.data[0].copy()
                st.running_var = p.value.data[1].copy()
            else:
                self.params[name].value.data = p.value.data


# ---------------------------------------------------------------------------
# K-means palette
# ---------------------------------------------------------------------------


def kmeans_palette(pixels, num_colors, seed, return_inertia=False):
    """Lloyd's algorithm with seeded k-means++-style initialisation.

    Returns (centers, assignments) and optionally the per-iteration inertia
    history. Empty clusters are re-seeded to the farthest pixel.
    """
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    n = pixels.shape[0]
    if n < 1 or num_colors < 1:
        raise ValueError("need at least one pixel and one cluster")

    uniq = np.unique(pixels, axis=0)
    if uniq.shape[0] <= num_colors:
        centers = np.vstack([uniq, np.repeat(uniq[-1:], num_colors - uniq.shape[0], axis=0)])
        d = ((pixels[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d.argmin(axis=1)
        if return_inertia:
            return centers, assign, [0.0]
        return centers, assign

    rng = np.random.default_rng(seed)
    centers = np.empty((num_colors, 3))
    centers[0] = pixels[rng.integers(n)]
    d2 = ((pixels - centers[0]) ** 2).sum(axis=1)
    for i in range(1, num_colors):
        total = d2.sum()
        if total <= 0:
            centers[i] = pixels[rng.integers(n)]
        else:
            centers[i] = pixels[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((pixels - centers[i]) ** 2).sum(axis=1))

    assign = None
    history = []
    for _ in range(50):
        d = ((pixels[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d.argmin(axis=1)
        history.append(float(np.take_along_axis(d, new_assign[:, None], axis=1).sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        dist_to_own = np.take_along_axis(d, assign[:, None], axis=1)[:, 0]
        for ci in range(num_colors):
            members = assign == ci
            if members.any():
                centers[ci] = pixels[members].mean(axis=0)
            else:
                centers[ci] = pixels[dist_to_own.argmax()]
    if return_inertia:
        return centers, assign, history
    return centers, assign


# ---------------------------------------------------------------------------
# Run-length coding of palette indices
# ---------------------------------------------------------------------------


def _index_bits(num_colors):
    return max(1, int(np.ceil(np.log2(num_colors))))


def rle_encode(indices, num_colors, run_bits):
    """Encode an index stream as (index, run-1) records; returns a 0/1 bit array.

    Each record is ceil(log2 F) index bits followed by `run_bits` bits storing
    run-1, so the maximum run is 2^run_bits.
    """
    if not 1 <= run_bits <= 8:
        raise ValueError("run_bits must lie in [1, 8]")
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= num_colors):
        raise ValueError("index out of palette range")
    ib = _index_bits(num_colors)
    max_run = 1 << run_bits
    bits = []
    i = 0
    n = indices.size
    while i < n:
        j = i
        while j < n and indices[j] == indices[i] and j - i < max_run:
            j += 1
        run = j - i
        val = int(indices[i])
        for b in range(ib - 1, -1, -1):
            bits.append((val >> b) & 1)
        rv = run - 1
        for b in range(run_bits - 1, -1, -1):
            bits.append((rv >> b) & 1)
        i = j
    return np.array(bits, dtype=np.uint8)


def rle_decode(bits, count, num_colors, run_bits):
    """Decode exactly `count` indices; raises CorruptFrameError on mismatch."""
    bits = np.asarray(bits, dtype=np.uint8)
    ib = _index_bits(num_colors)
    rec = ib + run_bits
    out = np.empty(count, dtype=np.int64)
    pos = 0
    filled = 0
    while filled < count:
        if pos + rec > bits.size:
            raise CorruptFrameError("RLE stream exhausted before index count reached")
        val = 0
        for b in bits[pos : pos + ib]:
            val = (val << 1) | int(b)
        stored = 0
        for b in bits[pos + ib : pos + rec]:
            stored = (stored << 1) | int(b)
        run = stored + 1  # field stores run-1
        pos += rec
        if val >= num_colors:
            raise CorruptFrameError(f"palette index {val} >= {num_colors}")
        if filled + run > count:
            raise CorruptFrameError("RLE run overflows declared index count")
        out[filled : filled + run] = val
        filled += run
    return out


# ---------------------------------------------------------------------------
# Refinement planning
# ---------------------------------------------------------------------------


@dataclass
class RefinementPlan:
    psi: float
    eta: float
    m_sel: int
    t_prime: int
    flags: np.ndarray  # (T,) uint8
    palette: np.ndarray  # (F, 3) uint8
    palette_size: int
    run_bits: int  # L
    rle_bits: np.ndarray  # 0/1 uint8 array
    patch_size: int

    @classmethod
    def empty(cls, num_patches, palette_size, run_bits, patch_size, psi=0.0):
        return cls(
            psi=psi,
            eta=0.0,
            m_sel=0,
            t_prime=0,
            flags=np.zeros(num_patches, dtype=np.uint8),
            palette=np.zeros((palette_size, 3), dtype=np.uint8),
            palette_size=palette_size,
            run_bits=run_bits,
            rle_bits=np.zeros(0, dtype=np.uint8),
            patch_size=patch_size,
        )


def _patch_pixels(image, patch_index, patch_size):
    """Raster-order (P*P, 3) pixel block of one patch."""
    vec = patchify(image, patch_size)[patch_index]
    return vec.reshape(3, patch_size, patch_size).transpose(1, 2, 0).reshape(-1, 3)


def plan_refinement(image, reconstruction, mask, psi, eta, palette_size, run_bits,
                    seed=0):
    """Select refinement patches, build the palette, and RLE-code the indices."""
    if not 2 <= palette_size <= 256:
        raise ValueError("palette size must lie in [2, 256]")
    if not 1 <= run_bits <= 8:
        raise ValueError("run-length field width must lie in [1, 8]")
    if not 0 <= eta <= 1:
        raise ValueError("refinement ratio must lie in [0, 1]")

    weights = mask.patch_weights
    t = weights.size
    gh = mask.patch_grid[0] if mask.patch_grid else 0
    patch_size = image.shape[1] // gh if gh else 0

    selected = np.flatnonzero(weights > psi)
    m_sel = selected.size
    t_prime = int(np.floor(eta * m_sel + 0.5))
    if m_sel == 0 or t_prime == 0:
        return RefinementPlan.empty(t, palette_size, run_bits, patch_size, psi=psi)

    image = np.asarray(image, dtype=np.float64)
    reconstruction = np.asarray(reconstruction, dtype=np.float64)
    img_patches = patchify(image, patch_size)
    rec_patches = patchify(reconstruction, patch_size)
    errors = ((img_patches[selected] - rec_patches[selected]) ** 2).sum(axis=1)
    order = sorted(range(m_sel), key=lambda i: (-errors[i], selected[i]))
    refined = np.sort(selected[order[:t_prime]])

    flags = np.zeros(t, dtype=np.uint8)
    flags[refined] = 1

    pixels = np.vstack([_patch_pixels(image, int(i), patch_size) for i in refined])
    centers, _ = kmeans_palette(pixels, palette_size, seed)
    palette = np.clip(np.rint(centers * 255.0), 0, 255).astype(np.uint8)
    # assign against the byte-quantized palette so receiver-side fills are exact
    d = ((pixels[:, None, :] * 255.0 - palette[None, :, :].astype(np.float64)) ** 2).sum(axis=2)
    indices = d.argmin(axis=1)
    rle_bits = rle_encode(indices, palette_size, run_bits)

    return RefinementPlan(
        psi=psi,
        eta=t_prime / m_sel,
        m_sel=m_sel,
        t_prime=t_prime,
        flags=flags,
        palette=palette,
        palette_size=palette_size,
        run_bits=run_bits,
        rle_bits=rle_bits,
        patch_size=patch_size,
    )


def apply_refinement(reconstruction, plan):
    """Overwrite flagged patches with their palette colors; others untouched."""
    out = np.asarray(reconstruction, dtype=np.float64).copy()
    if plan.t_prime == 0:
        return out
    p = plan.patch_size
    count = plan.t_prime * p * p
    indices = rle_decode(plan.rle_bits, count, plan.palette_size, plan.run_bits)
    colors = plan.palette.astype(np.float64) / 255.0
    _, h, w = out.shape
    gw = w // p
    pos = 0
    for patch_index in np.flatnonzero(plan.flags):
        gi, gj = divmod(int(patch_index), gw)
        block = colors[indices[pos : pos + p * p]].reshape(p, p, 3).transpose(2, 0, 1)
        out[:, gi * p : (gi + 1) * p, gj * p : (gj + 1) * p] = block
        pos += p * p
    return out
