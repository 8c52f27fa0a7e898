"""Loss functions for the three trainable generators.

Every function takes torch tensors and returns a 0-d tensor so it can sit in
an autograd graph. Pixel losses reduce by the mean over all elements; the
Tversky index sums per sample and then averages over the batch.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, NumericError, ParameterError


@dataclass
class LossWeights:
    lambda1: float = 100.0  # L1 weight; also the gamma of the pix2pix objective
    lambda2: float = 10.0  # weight on every cycle-consistency term
    alpha: float = 0.5
    beta: float = 0.5
    epsilon: float = 1e-6  # Tversky smoothing
    clamp_eps: float = 1e-7  # probability clamp for logarithms
    bce_reduction: str = "mean"
    m2s_literal_sum: bool = False

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "alpha", "beta", "epsilon", "clamp_eps"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ConfigurationError(f"{name} must be finite and >= 0, got {value}")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be > 0")
        if not 0 < self.clamp_eps < 0.5:
            raise ConfigurationError("clamp_eps must lie in (0, 0.5)")
        if self.bce_reduction not in ("mean", "sum"):
            raise ConfigurationError(f"bce_reduction must be 'mean' or 'sum', got {self.bce_reduction!r}")


@dataclass
class LossBreakdown:
    adversarial: float = 0.0
    l1: float = 0.0
    cycle_s2e: float = 0.0
    cycle_e2m: float = 0.0
    cycle_m2s: float = 0.0
    bce: float = 0.0
    tversky: float = 0.0
    total: float = 0.0

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def as_dict(self):
        return asdict(self)


def _require_finite(*tensors):
    for t in tensors:
        if t is not None and not bool(torch.isfinite(t).all()):
            raise NumericError("non-finite values in loss input")


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def adversarial_loss(real_scores, fake_scores, side="discriminator"):
    """Standard GAN loss evaluated on raw discriminator scores (logits).

    ``side="discriminator"`` returns ``-(E[log D(x)] + E[log(1 - D(G(z)))])``.
    ``side="generator"`` returns the non-saturating ``-E[log D(G(z))]`` and
    ignores ``real_scores``. Both use softplus, which is the log-sigmoid
    evaluated without forming probabilities that could round to 0 or 1.
    """
    _require_finite(real_scores, fake_scores)
    if side == "discriminator":
        return F.softplus(-real_scores).mean() + F.softplus(fake_scores).mean()
    if side == "generator":
        return F.softplus(-fake_scores).mean()
    raise ParameterError(f"side must be 'generator' or 'discriminator', got {side!r}")


def l1_loss(generated, target):
    _same_shape(generated, target)
    return (generated - target).abs().mean()


def cycle_loss_s2e(original_edge, reconstructed_edge):
    return l1_loss(reconstructed_edge, original_edge)


def cycle_loss_e2m(original_image, reconstructed_image):
    return l1_loss(reconstructed_image, original_image)


def cycle_loss_m2s(original_mask, reconstructed_mask):
    return l1_loss(reconstructed_mask, original_mask)


def bce_loss(y, y_hat, clamp_eps=1e-7, reduction="mean"):
    _same_shape(y, y_hat)
    _require_finite(y, y_hat)
    p = y_hat.clamp(clamp_eps, 1.0 - clamp_eps)
    per_pixel = -(y * torch.log(p) + (1.0 - y) * torch.log1p(-p))
    if reduction == "sum":
        return per_pixel.sum()
    return per_pixel.mean()


def _per_sample_sums(x):
    if x.dim() == 4:
        return x.flatten(1).sum(dim=1)
    return x.sum().reshape(1)


def tversky_index(pred, gt, alpha=0.5, beta=0.5, epsilon=1e-6):
    _same_shape(pred, gt)
    tp = _per_sample_sums(gt * pred)
    false_pos = _per_sample_sums((1.0 - gt) * pred)
    false_neg = _per_sample_sums(gt * (1.0 - pred))
    return (tp + epsilon) / (tp + alpha * false_pos + beta * false_neg + epsilon)


def tversky_loss(pred, gt, weights: LossWeights | None = None):
    w = weights or LossWeights()
    return 1.0 - tversky_index(pred, gt, w.alpha, w.beta, w.epsilon).mean()


def dice_loss(pred, gt, epsilon=2e-6):
    _same_shape(pred, gt)
    inter = _per_sample_sums(pred * gt)
    total = _per_sample_sums(pred) + _per_sample_sums(gt)
    return 1.0 - ((2.0 * inter + epsilon) / (total + epsilon)).mean()


def _part(parts, name):
    if isinstance(parts, Mapping):
        return parts.get(name, 0.0)
    return getattr(parts, name)


def total_loss_s2e(parts, weights: LossWeights):
    return (
        _part(parts, "adversarial")
        + weights.lambda1 * _part(parts, "l1")
        + weights.lambda2 * (_part(parts, "cycle_s2e") + _part(parts, "cycle_e2m"))
    )


def total_loss_e2m(parts, weights: LossWeights):
    return total_loss_s2e(parts, weights)


def total_loss_m2s(parts, weights: LossWeights):
    # m2s_literal_sum counts the e2m cycle term twice in place of the s2e term
    first = "cycle_e2m" if weights.m2s_literal_sum else "cycle_s2e"
    cycles = _part(parts, first) + _part(parts, "cycle_e2m") + _part(parts, "cycle_m2s")
    return weights.lambda2 * cycles + _part(parts, "bce") + _part(parts, "tversky")
