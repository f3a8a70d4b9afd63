"""C'-way classification head on the ViT backbone, fine-tuned with
cross-entropy on a small labeled subset."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .checkpoint import clone_params
from .distill import _clamp_min
from .vit import init_vit_params, vit_forward


@dataclass
class ClassifierConfig:
    num_classes: int = 4
    labeled_fraction: float = 0.1
    lr: float = 0.05
    steps: int = 200
    batch_size: int = 8
    head_only: bool = False

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if not 0 < self.labeled_fraction <= 1:
            raise ValueError("labeled_fraction must lie in (0, 1]")


@dataclass
class Prediction:
    probs: np.ndarray  # length C', sums to 1
    label: int  # argmax class index


class ClassifierModel:
    """ViT backbone with a linear CLS-token head onto C' classes."""

    def __init__(self, vit_config, num_classes, rng=None, backbone_params=None):
        self.vit_config = vit_config
        self.num_classes = num_classes
        if rng is None:
            rng = np.random.default_rng(0)
        if backbone_params is None:
            self.params = init_vit_params(vit_config, rng, learnable=True)
        else:
            # e.g. the distilled student checkpoint; head params are dropped
            self.params = clone_params(
                {k: v for k, v in backbone_params.items() if not k.startswith("head.")},
                learnable=True,
            )
        c = vit_config.dim
        self.params["cls_head.w"] = Parameter(rng.normal(0, 0.02, (c, num_classes)))
        self.params["cls_head.b"] = Parameter(np.zeros(num_classes))

    def logits(self, image):
        tokens, _ = vit_forward(image, self.vit_config, self.params)
        return ad.affine(
            tokens[0], self.params["cls_head.w"].value, self.params["cls_head.b"].value
        )


def classify(image, model):
    """Forward pass to a Prediction (softmax at temperature 1)."""
    probs = ad.softmax(model.logits(image)).data
    return Prediction(probs=probs, label=int(probs.argmax()))


def finetune(model, labeled, config, rng=None):
    """SGD cross-entropy fine-tuning on (image, label) pairs; returns losses."""
    for _, label in labeled:
        if not 0 <= label < config.num_classes:
            raise ValueError(f"label {label} out of range [0, {config.num_classes})")
    if rng is None:
        rng = np.random.default_rng(0)
    if config.head_only:
        for name, p in model.params.items():
            if not name.startswith("cls_head."):
                p.learnable = False
                p.value.requires_grad = False
    losses = []
    n = len(labeled)
    for _ in range(config.steps):
        idx = rng.choice(n, size=min(config.batch_size, n), replace=False)
        total = None
        for i in idx:
            image, label = labeled[int(i)]
            p = ad.softmax(model.logits(image))
            loss = -(_clamp_min(p[int(label)], 1e-12).log())
            total = loss if total is None else total + loss
        loss = total / len(idx)
        loss.backward()
        ad.sgd_step(model.params.values(), config.lr)
        ad.zero_grads(model.params.values())
        losses.append(loss.item())
    return losses


def evaluate_accuracy(model, test):
    """Fraction of argmax-correct predictions over (image, label) pairs."""
    if not test:
        raise ValueError("test set is empty")
    correct = sum(classify(image, model).label == label for image, label in test)
    return correct / len(test)
