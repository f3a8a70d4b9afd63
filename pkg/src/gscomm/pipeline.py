"""End-to-end orchestration: mask -> encode -> frame -> channel -> decode ->
refine -> classify, with per-image reports and grid sweeps."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import CODECS, ChannelConfig, measure_ber
from .classifier import ClassifierConfig, ClassifierModel, classify, evaluate_accuracy, finetune
from .distill import DistillConfig, MaskingNetwork, train_step_distill
from .errors import CorruptFrameError, UndefinedMetricError, UnsupportedFormatError
from .framing import bits_to_bytes, bytes_to_bits, frame_size_bits, parse_frame, serialize_frame
from .masking import apply_mask
from .metrics import masked_psnr
from .ssae import SSAE, SSAEConfig, apply_refinement, plan_refinement
from .vit import ViTConfig


@dataclass
class RefineParams:
    psi: float = 5e-3
    eta: float = 0.5
    palette_size: int = 8  # F
    run_bits: int = 4  # L


@dataclass
class ReportRow:
    payload_bits: int
    measured_ber: float
    masked_psnr_db: float
    accuracy: float  # 1.0/0.0 per image, nan when unlabeled
    non_masked_pixel_fraction: float
    failure: str = ""


@dataclass
class PipelineModels:
    masker: MaskingNetwork
    ssae: SSAE
    classifier: ClassifierModel = None
    fec: object = None

    def __post_init__(self):
        if self.fec is None:
            self.fec = CODECS["identity"]


def run_end_to_end(image, models, refine, channel, label=None, seed=0):
    """One image through the full chain; returns (reconstruction, prediction, row)."""
    image = np.asarray(image, dtype=np.float64)
    mask = models.masker.semantic_mask(image)
    masked = apply_mask(image, mask)
    _, quantized = models.ssae.encode_quantize(masked)
    local_recon = models.ssae.decode(quantized)
    plan = plan_refinement(
        masked, local_recon, mask, refine.psi, refine.eta,
        refine.palette_size, refine.run_bits, seed=seed,
    )
    ssae_cfg = models.ssae.config
    dims = (image.shape[1], image.shape[2], models.masker.vit_config.patch_size)
    frame = serialize_frame(quantized, plan, ssae_cfg, dims)
    payload_bits = frame_size_bits(ssae_cfg, dims, plan)

    sent = bytes_to_bits(frame)
    coded = models.fec.encode(sent)
    received = replace(channel, seed=seed ^ channel.seed).apply(coded)
    decoded = models.fec.decode(received)
    ber = measure_ber(sent, decoded)

    fraction = float(mask.mask.mean())
    try:
        rx_quantized, rx_plan, _ = parse_frame(bits_to_bytes(decoded)[: len(frame)])
        recon = models.ssae.decode(rx_quantized)
        recon = apply_refinement(recon, rx_plan)
    except (CorruptFrameError, UnsupportedFormatError) as exc:
        row = ReportRow(payload_bits, ber, math.nan, math.nan, fraction, failure=str(exc))
        return None, None, row

    try:
        psnr = masked_psnr(image, recon, mask)
    except UndefinedMetricError:
        psnr = math.nan
    pred = classify(recon, models.classifier) if models.classifier else None
    if label is not None and pred is not None:
        acc = float(pred.label == label)
    else:
        acc = math.nan
    row = ReportRow(payload_bits, ber, psnr, acc, fraction)
    return recon, pred, row


REPORT_COLUMNS = (
    "payload_bits,measured_ber,masked_psnr_db,accuracy,non_masked_pixel_fraction,failure"
)
SWEEP_COLUMNS = (
    "grid_value,replicate,mean_masked_psnr_db,mean_accuracy,mean_payload_bits,failures"
)


def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6f}"
    return str(x)


def report_csv(rows):
    lines = [REPORT_COLUMNS]
    for r in rows:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.payload_bits,
                    r.measured_ber,
                    r.masked_psnr_db,
                    r.accuracy,
                    r.non_masked_pixel_fraction,
                    r.failure,
                )
            )
        )
    return "\n".join(lines) + "\n"


def sweep(examples, grid_values, models, refine, replicates=1, base_seed=0,
          mode="bsc_ber"):
    """Grid sweep; one CSV row per (grid value, replicate). Returns (rows, csv)."""
    if not grid_values:
        raise ValueError("grid must be non-empty")
    out = []
    for gi, value in enumerate(grid_values):
        for rep in range(replicates):
            psnrs, accs, payloads, failures = [], [], [], 0
            for ii, (image, label) in enumerate(examples):
                seed = base_seed + 1_000_003 * gi + 7919 * rep + ii
                if mode == "bsc_ber":
                    channel = ChannelConfig(mode="bsc_ber", ber=value, seed=0)
                else:
                    channel = ChannelConfig(mode="awgn_snr_db", snr_db=value, seed=0)
                _, _, row = run_end_to_end(
                    image, models, refine, channel, label=label, seed=seed
                )
                if row.failure:
                    failures += 1
                    continue
                if not math.isnan(row.masked_psnr_db) and not math.isinf(row.masked_psnr_db):
                    psnrs.append(row.masked_psnr_db)
                if not math.isnan(row.accuracy):
                    accs.append(row.accuracy)
                payloads.append(row.payload_bits)
            out.append(
                {
                    "grid_value": value,
                    "replicate": rep,
                    "mean_masked_psnr_db": float(np.mean(psnrs)) if psnrs else math.nan,
                    "mean_accuracy": float(np.mean(accs)) if accs else math.nan,
                    "mean_payload_bits": float(np.mean(payloads)) if payloads else math.nan,
                    "failures": failures,
                }
            )
    lines = [SWEEP_COLUMNS]
    for r in out:
        lines.append(
            ",".join(
                _fmt(r[c])
                for c in (
                    "grid_value",
                    "replicate",
                    "mean_masked_psnr_db",
                    "mean_accuracy",
                    "mean_payload_bits",
                    "failures",
                )
            )
        )
    return out, "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Desk-scale training orchestration (used by the CLI and acceptance tests)
# ---------------------------------------------------------------------------


@dataclass
class TrainBudget:
    distill_steps: int = 150
    distill_lr: float = 0.05
    ssae_steps: int = 400
    ssae_lr: float = 0.3
    finetune_steps: int = 250
    finetune_lr: float = 0.05
    batch_size: int = 8


def train_masker(examples, vit_config, distill_config, budget, seed):
    """Distill a student masking network against a fixed random teacher."""
    rng = np.random.default_rng(seed)
    teacher = MaskingNetwork(vit_config, distill_config,
                             rng=np.random.default_rng(seed + 1), learnable=False)
    student = MaskingNetwork(vit_config, distill_config,
                             rng=np.random.default_rng(seed + 2), learnable=True)
    images = [ex.image for ex in examples]
    losses = []
    for step in range(budget.distill_steps):
        idx = rng.choice(len(images), size=min(budget.batch_size, len(images)), replace=False)
        batch = [images[int(i)] for i in idx]
        losses.append(
            train_step_distill(student, teacher, batch, distill_config, budget.distill_lr, rng)
        )
    return student, teacher, losses


def train_ssae_on(examples, masks3, ssae_config, budget, seed):
    """Train an SSAE on (image, 3-channel mask) pairs."""
    rng = np.random.default_rng(seed)
    ssae = SSAE(ssae_config, rng=np.random.default_rng(seed + 3))
    n = len(examples)
    losses = []
    for step in range(budget.ssae_steps):
        idx = rng.choice(n, size=min(budget.batch_size, n), replace=False)
        losses.append(
            ssae.train_step(
                [examples[int(i)] for i in idx], [masks3[int(i)] for i in idx], budget.ssae_lr
            )
        )
    return ssae, losses


def train_classifier_on(pairs, vit_config, num_classes, budget, seed, backbone_params=None):
    model = ClassifierModel(
        vit_config, num_classes, rng=np.random.default_rng(seed + 4),
        backbone_params=backbone_params,
    )
    cfg = ClassifierConfig(
        num_classes=num_classes, lr=budget.finetune_lr, steps=budget.finetune_steps,
        batch_size=budget.batch_size,
    )
    losses = finetune(model, pairs, cfg, rng=np.random.default_rng(seed + 5))
    return model, losses
