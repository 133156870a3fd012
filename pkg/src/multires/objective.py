"""Masked-unit cross-entropy over multiple resolutions."""

from __future__ import annotations

from dataclasses import dataclass

from . import numerics as nm
from .errors import ShapeError
from .masking import MaskSet
from .quantizer import UnitSequence


@dataclass
class ResolutionLoss:
    resolution_ms: int
    loss: float
    masked_frames: int
    masked_accuracy: float
    vacuous: bool  # True when the mask was empty


@dataclass
class LossBreakdown:
    per_resolution: list[ResolutionLoss]
    total: float
    weights: tuple[float, ...]


def masked_ce(logits: nm.Tensor, targets: UnitSequence, mask: MaskSet) -> tuple[nm.Tensor, float]:
    """Mean negative log-softmax of the target unit over masked frames.

    Returns (loss tensor, masked accuracy).  An empty mask yields a constant
    zero loss with vacuous accuracy 1.
    """
    length = logits.shape[0]
    if len(targets) != length or mask.sequence_length != length:
        raise ShapeError(
            f"masked_ce: logits {logits.shape}, targets {len(targets)}, "
            f"mask length {mask.sequence_length} must agree")
    return nm.cross_entropy_masked(logits, targets.as_array(), mask.indices)


def combine(per_res_losses: list[nm.Tensor], weights) -> nm.Tensor:
    """Weighted sum of per-resolution losses."""
    if len(per_res_losses) != len(weights):
        raise ShapeError(f"combine: {len(per_res_losses)} losses vs {len(weights)} weights")
    if any(w < 0 for w in weights):
        raise ShapeError(f"combine: weights must be non-negative, got {tuple(weights)}")
    return nm.weighted_sum_scalars(per_res_losses, weights)


def multi_resolution_loss(logits_by_res: list[nm.Tensor], targets_by_res: list[UnitSequence],
                          masks_by_res: list[MaskSet], weights,
                          resolutions_ms) -> tuple[nm.Tensor, LossBreakdown]:
    """Per-resolution masked CE combined under the configured weights.

    All list arguments are ordered native resolution first, matching the
    configuration's `resolutions_ms` and `loss_weights`.
    """
    losses: list[nm.Tensor] = []
    rows: list[ResolutionLoss] = []
    for logits, targets, mask, res in zip(logits_by_res, targets_by_res, masks_by_res,
                                          resolutions_ms, strict=True):
        loss, acc = masked_ce(logits, targets, mask)
        losses.append(loss)
        rows.append(ResolutionLoss(resolution_ms=res, loss=float(loss.data),
                                   masked_frames=len(mask), masked_accuracy=acc,
                                   vacuous=len(mask) == 0))
    total = combine(losses, weights)
    return total, LossBreakdown(per_resolution=rows, total=float(total.data),
                                weights=tuple(float(w) for w in weights))
