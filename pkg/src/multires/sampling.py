"""Learned resampling between resolutions.

Each module realizes a rational rate change through coprime (up, down)
factors.  The flexible variant blends a learned path (kernel-1 transposed
convolution, then kernel-1 strided convolution) with parameter-free paths
(repeat-upsampling and skip-downsampling) under a residual scaling phi:

    out = phi * [Skip_d(Repeat_u(x)) + phi * (Conv_d(x_up) + Skip_d(x_up))]

where x_up is the transposed-convolution output zero-padded from
(L-1)*u + 1 to L*u rows.  The simple variant keeps only one learned path per
direction and therefore requires an integer overall ratio.

Convolutions here carry no bias, so the whole module is linear in its input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .config import RateFactors
from .errors import EmptySequenceError, UnsupportedRatioError


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def down_length(length: int, factors: RateFactors) -> int:
    return ceil_div(length * factors.up, factors.down)


def up_length(length: int, factors: RateFactors) -> int:
    return ceil_div(length * factors.down, factors.up)


def skip_resample(x: nm.Tensor, factor: int) -> nm.Tensor:
    """Rows 0, factor, 2*factor, ...; output length ceil(L / factor)."""
    if x.shape[0] == 0:
        raise EmptySequenceError("skip_resample: empty input")
    return nm.skip_rows(x, factor)


def repeat_upsample(x: nm.Tensor, factor: int) -> nm.Tensor:
    """Each row duplicated factor consecutive times."""
    if x.shape[0] == 0:
        raise EmptySequenceError("repeat_upsample: empty input")
    return nm.repeat_rows(x, factor)


@dataclass
class SamplerParams:
    """Kernel-1 conv pair plus the residual scale for one direction."""

    deconv: nm.Parameter | None  # (D, D, 1) transposed-conv kernel
    conv: nm.Parameter | None    # (D, D, 1) conv kernel
    phi: float
    factors: RateFactors         # descent-transition factors (up, down)
    direction: str               # "down" | "up"
    variant: str                 # "flexible" | "simple"

    def module_factors(self) -> tuple[int, int]:
        """(upsample, downsample) as used by this module."""
        if self.direction == "down":
            return self.factors.up, self.factors.down
        return self.factors.down, self.factors.up

    def parameters(self) -> list[nm.Parameter]:
        return [p for p in (self.deconv, self.conv) if p is not None]


def make_sampler(dim: int, factors: RateFactors, direction: str, variant: str, phi: float,
                 rng: np.random.Generator, dtype, prefix: str) -> SamplerParams:
    std = 1.0 / np.sqrt(dim)
    need_deconv = variant == "flexible" or direction == "up"
    need_conv = variant == "flexible" or direction == "down"
    deconv = conv = None
    if need_deconv:
        w = (rng.standard_normal((dim, dim, 1)) * std).astype(dtype)
        deconv = nm.Parameter(w, f"{prefix}.deconv.w")
    if need_conv:
        w = (rng.standard_normal((dim, dim, 1)) * std).astype(dtype)
        conv = nm.Parameter(w, f"{prefix}.conv.w")
    return SamplerParams(deconv=deconv, conv=conv, phi=phi, factors=factors,
                         direction=direction, variant=variant)


def resample_forward(x: nm.Tensor, params: SamplerParams,
                     target_len: int | None = None) -> nm.Tensor:
    """Apply the sampling module; optionally force the output row count."""
    length = x.shape[0]
    if length == 0:
        raise EmptySequenceError("resample_forward: empty input")
    u, d = params.module_factors()
    phi = params.phi
    if params.variant == "simple":
        if u > 1 and d > 1:
            raise UnsupportedRatioError(
                f"simple sampling cannot realize ratio {u}:{d}; use the flexible variant")
        if params.direction == "down":
            out = nm.scale(nm.add(nm.conv1d(x, params.conv, stride=d),
                                  skip_resample(x, d)), phi)
        else:
            x_up = nm.fit_rows(nm.transposed_conv1d(x, params.deconv, stride=u), length * u)
            out = nm.scale(nm.add(x_up, repeat_upsample(x, u)), phi)
    else:
        x_up = nm.fit_rows(nm.transposed_conv1d(x, params.deconv, stride=u), length * u)
        plain = skip_resample(repeat_upsample(x, u), d)
        learned = nm.add(nm.conv1d(x_up, params.conv, stride=d), skip_resample(x_up, d))
        out = nm.scale(nm.add(plain, nm.scale(learned, phi)), phi)
    if target_len is not None:
        out = nm.fit_rows(out, target_len)
    return out
