"""Convolutional waveform frontend producing frame-wise features.

The default stack is seven strided conv layers with a total stride of 320
samples (20 ms at 16 kHz).  The first layer's output is group-normalized;
every layer is followed by an exact GELU.  There is no implicit padding, so
output lengths follow floor((L - k) / stride) + 1 per layer.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .audio import Waveform
from .config import ConvExtractorSpec
from .errors import SequenceTooShortError, ShapeError


def output_length(n_samples: int, spec: ConvExtractorSpec) -> int:
    """Closed-form frame count of extract() for an input of n_samples."""
    minimum = spec.min_samples()
    if n_samples < minimum:
        raise SequenceTooShortError(n_samples, minimum, "waveform")
    n = n_samples
    for _, k, s in spec.layers:
        n = (n - k) // s + 1
    return n


def standardize(samples: np.ndarray) -> np.ndarray:
    """Per-utterance zero-mean unit-variance normalization (epsilon-guarded)."""
    mu = samples.mean()
    var = samples.var()
    return (samples - mu) / np.sqrt(var + 1e-10)


class FrontendParams:
    """Owns the conv kernels and the first-layer group-norm affine."""

    def __init__(self, spec: ConvExtractorSpec, rng: np.random.Generator,
                 dtype=np.float32, prefix: str = "frontend"):
        self.spec = spec
        self.convs: list[nm.Parameter] = []
        cin = 1
        for i, (cout, k, s) in enumerate(spec.layers):
            fan_in = cin * k
            w = _trunc_normal(rng, (cout, cin, k), 1.0 / np.sqrt(fan_in), dtype)
            self.convs.append(nm.Parameter(w, f"{prefix}.conv{i}.w"))
            cin = cout
        c0 = spec.layers[0][0]
        self.gn_gain = nm.Parameter(np.ones(c0, dtype=dtype), f"{prefix}.gn.gain")
        self.gn_bias = nm.Parameter(np.zeros(c0, dtype=dtype), f"{prefix}.gn.bias")

    def parameters(self) -> list[nm.Parameter]:
        return [*self.convs, self.gn_gain, self.gn_bias]


def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    draw = rng.standard_normal(shape)
    # Resample the tails so every draw lies within two standard deviations.
    for _ in range(8):
        bad = np.abs(draw) > 2.0
        if not bad.any():
            break
        draw[bad] = rng.standard_normal(int(bad.sum()))
    return (draw * std).astype(dtype)


def extract(waveform: Waveform, params: FrontendParams, normalize: bool) -> nm.Tensor:
    """Run the conv stack on a mono waveform; returns (frames, channels)."""
    if waveform.sample_rate != 16000:
        raise ShapeError(f"expected 16000 Hz audio, got {waveform.sample_rate}")
    spec = params.spec
    minimum = spec.min_samples()
    if waveform.num_samples < minimum:
        raise SequenceTooShortError(waveform.num_samples, minimum, "waveform")
    samples = waveform.samples
    if normalize:
        samples = standardize(samples)
    dtype = params.convs[0].data.dtype
    x = nm.constant(samples.reshape(-1, 1).astype(dtype))
    for i, (cout, k, s) in enumerate(spec.layers):
        x = nm.conv1d(x, params.convs[i], stride=s)
        if i == 0:
            x = nm.group_norm(x, params.gn_gain, params.gn_bias, groups=cout)
        x = nm.gelu(x)
    return x
