"""Span masking: sampling, application, and projection across resolutions."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .config import RateFactors
from .errors import ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskSet:
    """Sorted, duplicate-free frame indices masked at one resolution."""

    indices: tuple[int, ...]
    sequence_length: int
    resolution_ms: int

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.indices)))
        object.__setattr__(self, "indices", idx)
        if idx and (idx[0] < 0 or idx[-1] >= self.sequence_length):
            raise ShapeError(
                f"mask indices outside [0, {self.sequence_length}): {idx[0]}..{idx[-1]}")

    def __len__(self) -> int:
        return len(self.indices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)


def sample_mask(length: int, mask_prob: float, span: int, rng: np.random.Generator,
                resolution_ms: int = 20) -> MaskSet:
    """Draw floor(mask_prob * L / span) span starts without replacement.

    Starts are uniform over [0, L - span]; the mask is the union of the spans,
    so spans may overlap.  A sequence shorter than one span yields an empty
    mask rather than an error.
    """
    if length < 1:
        raise ShapeError(f"sequence length must be >= 1, got {length}")
    if not 0.0 <= mask_prob <= 1.0:
        raise ShapeError(f"mask_prob {mask_prob} outside [0, 1]")
    if span < 1:
        raise ShapeError(f"span {span} must be >= 1")
    if length < span:
        if mask_prob > 0:
            log.debug("sequence length %d shorter than span %d; empty mask", length, span)
        return MaskSet((), length, resolution_ms)
    n_starts = int(mask_prob * length / span)
    n_starts = min(n_starts, length - span + 1)
    if n_starts == 0:
        return MaskSet((), length, resolution_ms)
    starts = rng.choice(length - span + 1, size=n_starts, replace=False)
    masked: set[int] = set()
    for s in starts:
        masked.update(range(int(s), int(s) + span))
    return MaskSet(tuple(sorted(masked)), length, resolution_ms)


def apply_mask(features: nm.Tensor, mask: MaskSet) -> nm.Tensor:
    """Zero the masked rows; all other rows are bit-identical to the input."""
    if features.shape[0] != mask.sequence_length:
        raise ShapeError(
            f"mask length {mask.sequence_length} vs features {features.shape}")
    return nm.mask_rows(features, mask.indices)


def apply_mask_embedding(features: nm.Tensor, mask: MaskSet, embedding: nm.Parameter) -> nm.Tensor:
    """Alternative masking that writes a learned vector instead of zeros."""
    if features.shape[0] != mask.sequence_length:
        raise ShapeError(
            f"mask length {mask.sequence_length} vs features {features.shape}")
    zeroed = nm.mask_rows(features, mask.indices)
    onehot = np.zeros((mask.sequence_length, 1), dtype=features.data.dtype)
    onehot[list(mask.indices)] = 1.0
    fill = nm.affine(nm.constant(onehot), nm.reshape(embedding, (1, -1)))
    return nm.add(zeroed, fill)


def project_mask(mask: MaskSet, factors: RateFactors, low_length: int,
                 rule: str = "any") -> MaskSet:
    """Project a mask to the downsampled resolution.

    Under the default "any" rule, low-resolution index j is masked iff some
    masked high-resolution index i satisfies floor(i * up / down) == j.  The
    stricter "all" rule requires every high-resolution frame mapping to j to
    be masked.
    """
    u, d = factors.up, factors.down
    if rule == "any":
        low = {(i * u) // d for i in mask.indices}
        low = {j for j in low if j < low_length}
    elif rule == "all":
        cover: dict[int, int] = {}
        for i in range(mask.sequence_length):
            cover[(i * u) // d] = cover.get((i * u) // d, 0) + 1
        hits: dict[int, int] = {}
        for i in mask.indices:
            j = (i * u) // d
            hits[j] = hits.get(j, 0) + 1
        low = {j for j, c in hits.items() if c == cover.get(j, 0) and j < low_length}
    else:
        raise ShapeError(f"unknown mask projection rule {rule!r}")
    low_res_ms = mask.resolution_ms * d // u if u else mask.resolution_ms
    return MaskSet(tuple(sorted(low)), low_length, low_res_ms)
