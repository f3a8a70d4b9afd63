"""Student/teacher self-distillation of the masking network.

The teacher is fixed (non-learnable parameters); gradients flow only through
the student. Views: the teacher's coarse mask gives the weak view, the student
view additionally zeroes X random patches and applies color jitter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .masking import MaskParams, apply_mask, build_semantic_mask, cls_attention_maps
from .vit import ViTConfig, init_vit_params, patchify, unpatchify, vit_forward

LOG_FLOOR = 1e-12
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class DistillConfig:
    epsilon: float = 0.1  # softmax temperature
    proj_dim: int = 16  # K
    masked_patches: int = 10  # X
    xi_range: tuple = (0.9, 1.1)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.proj_dim < 2:
            raise ValueError("projection dimension must be >= 2")
        if self.masked_patches < 0:
            raise ValueError("masked patch count must be >= 0")
        lo, hi = self.xi_range
        if not (0 < lo <= hi < 2):
            raise ValueError("xi_range must lie within (0, 2)")


@dataclass
class ViewPair:
    teacher_view: np.ndarray
    student_view: np.ndarray


@dataclass
class ProjectionOutput:
    logits: Tensor  # length-K
    q: Tensor  # length-K probability vector


def init_head_params(vit_config, distill_config, rng, learnable=True):
    c = vit_config.dim
    hidden = 4 * c
    k = distill_config.proj_dim
    return {
        # a larger scale than the backbone's keeps the projection head's
        # temperature-softmax targets away from the uniform fixed point
        "head.w1": Parameter(rng.normal(0, 0.5, (c, hidden)), learnable=learnable),
        "head.b1": Parameter(np.zeros(hidden), learnable=learnable),
        "head.w2": Parameter(rng.normal(0, 0.5, (hidden, k)), learnable=learnable),
        "head.b2": Parameter(np.zeros(k), learnable=learnable),
    }


class MaskingNetwork:
    """ViT backbone + projection head + mask parameters, as one unit."""

    def __init__(self, vit_config, distill_config, rng=None, learnable=True,
                 mask_params=None, params=None):
        self.vit_config = vit_config
        self.distill_config = distill_config
        self.mask_params = mask_params or MaskParams()
        if params is None:
            if rng is None:
                rng = np.random.default_rng(0)
            params = init_vit_params(vit_config, rng, learnable=learnable)
            params.update(init_head_params(vit_config, distill_config, rng, learnable))
        self.params = params

    def forward(self, image):
        tokens, internals = vit_forward(image, self.vit_config, self.params)
        return tokens, internals

    def project(self, image):
        tokens, _ = self.forward(image)
        cls = tokens[0]
        return project_head(cls, self.params, self.distill_config.epsilon)

    def semantic_mask(self, image, mask_params=None):
        _, internals = self.forward(image)
        maps = cls_attention_maps(internals, self.vit_config)
        return build_semantic_mask(
            maps,
            mask_params or self.mask_params,
            (self.vit_config.img_h, self.vit_config.img_w),
        )


def project_head(cls_token, params, epsilon):
    """MLP projection of the CLS token followed by temperature softmax."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    h = ad.relu(ad.affine(cls_token, params["head.w1"].value, params["head.b1"].value))
    logits = ad.affine(h, params["head.w2"].value, params["head.b2"].value)
    q = ad.softmax(logits, temperature=epsilon)
    return ProjectionOutput(logits=logits, q=q)


def _clamp_min(t, floor):
    out = Tensor(np.maximum(t.data, floor), (t,))

    def bwd(g):
        t._accumulate(g * (t.data > floor))

    out._backward = bwd
    return out


def distill_loss(q_t, q_s):
    """Cross entropy -sum(q_t * log q_s); q_s log-floored at 1e-12.

    q_t is treated as a constant target; q_s may be a Tensor (for training)
    or a plain array (returns a float).
    """
    q_t = q_t.data if isinstance(q_t, Tensor) else np.asarray(q_t, dtype=np.float64)
    as_tensor = isinstance(q_s, Tensor)
    q_s_data = q_s.data if as_tensor else np.asarray(q_s, dtype=np.float64)
    if q_t.shape != q_s_data.shape:
        raise ValueError(f"distribution lengths differ: {q_t.shape} vs {q_s_data.shape}")
    if as_tensor:
        return -((Tensor(q_t) * _clamp_min(q_s, LOG_FLOOR).log()).sum())
    return float(-(q_t * np.log(np.maximum(q_s_data, LOG_FLOOR))).sum())


def entropy(q):
    q = np.asarray(q, dtype=np.float64)
    return float(-(q * np.log(np.maximum(q, LOG_FLOOR))).sum())


def color_jitter(image, brightness, contrast, saturation):
    """Scale brightness, contrast, saturation (in that order), then clamp to [0,1].

    A factor of exactly 1.0 leaves its stage bit-identical.
    """
    out = np.asarray(image, dtype=np.float64)
    if brightness != 1.0:
        out = out * brightness
    if contrast != 1.0:
        mean = float((LUMA @ out.reshape(3, -1)).mean())
        out = mean + (out - mean) * contrast
    if saturation != 1.0:
        gray = np.tensordot(LUMA, out, axes=(0, 0))
        out = gray[None] + (out - gray[None]) * saturation
    if brightness == contrast == saturation == 1.0:
        return out.copy()
    return np.clip(out, 0.0, 1.0)


def make_views(image, teacher, config, rng):
    """Build the (teacher view, student view) pair for one image."""
    vit_cfg = teacher.vit_config
    t = vit_cfg.num_patches
    if config.masked_patches > t:
        raise ValueError(f"cannot mask {config.masked_patches} of {t} patches")

    coarse_params = MaskParams(
        rho=teacher.mask_params.rho / 2.0,
        final_threshold=teacher.mask_params.final_threshold,
    )
    coarse = teacher.semantic_mask(image, coarse_params)
    teacher_view = apply_mask(image, coarse)

    student_view = teacher_view.copy()
    if config.masked_patches > 0:
        p = vit_cfg.patch_size
        patches = patchify(student_view, p)
        drop = rng.choice(t, size=config.masked_patches, replace=False)
        patches[drop] = 0.0
        student_view = unpatchify(patches, p, vit_cfg.img_h, vit_cfg.img_w)
    lo, hi = config.xi_range
    factors = [lo if lo == hi else float(rng.uniform(lo, hi)) for _ in range(3)]
    student_view = color_jitter(student_view, *factors)
    return ViewPair(teacher_view=teacher_view, student_view=student_view)


def train_step_distill(student, teacher, batch, config, lr, rng):
    """One distillation step over a batch; returns the mean loss."""
    losses = []
    total = None
    for image in batch:
        views = make_views(image, teacher, config, rng)
        q_t = teacher.project(views.teacher_view).q.data
        q_s = student.project(views.student_view).q
        loss = distill_loss(q_t, q_s)
        total = loss if total is None else total + loss
        losses.append(loss.item())
    mean_loss = total / len(batch)
    mean_loss.backward()
    ad.sgd_step(student.params.values(), lr)
    ad.zero_grads(student.params.values())
    return float(np.mean(losses))
