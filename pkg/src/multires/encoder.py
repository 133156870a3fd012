"""Transformer encoder stacks with an optional pre-convolutional positional module.

Blocks are pre-layer-norm: x + attn(LN(x)), then x + FFN(LN(x)) with GELU.
A stack with at least one layer ends with a final layer norm; an empty stack
is the identity.  The pre-conv module is a same-length grouped convolution
whose GELU output is added to the input, followed by a layer norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import EmptySequenceError


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    dim: int
    ffn_dim: int
    heads: int
    has_pre_conv: bool = False
    pre_conv_kernel: int = 128
    pre_conv_groups: int = 16
    dropout: float = 0.0


@dataclass
class EncoderOutput:
    final: nm.Tensor
    per_layer: list[nm.Tensor]


class LayerParams:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype, prefix: str):
        d, f = cfg.dim, cfg.ffn_dim
        mk = lambda shape, name: nm.Parameter(_trunc_normal(rng, shape, 0.02, dtype), name)
        zeros = lambda n, name: nm.Parameter(np.zeros(n, dtype=dtype), name)
        ones = lambda n, name: nm.Parameter(np.ones(n, dtype=dtype), name)
        self.wq = mk((d, d), f"{prefix}.q.w")
        self.bq = zeros(d, f"{prefix}.q.b")
        self.wk = mk((d, d), f"{prefix}.k.w")
        self.bk = zeros(d, f"{prefix}.k.b")
        self.wv = mk((d, d), f"{prefix}.v.w")
        self.bv = zeros(d, f"{prefix}.v.b")
        self.wo = mk((d, d), f"{prefix}.o.w")
        self.bo = zeros(d, f"{prefix}.o.b")
        self.ln1_g = ones(d, f"{prefix}.ln1.gain")
        self.ln1_b = zeros(d, f"{prefix}.ln1.bias")
        self.ln2_g = ones(d, f"{prefix}.ln2.gain")
        self.ln2_b = zeros(d, f"{prefix}.ln2.bias")
        self.fc1_w = mk((d, f), f"{prefix}.fc1.w")
        self.fc1_b = zeros(f, f"{prefix}.fc1.b")
        self.fc2_w = mk((f, d), f"{prefix}.fc2.w")
        self.fc2_b = zeros(d, f"{prefix}.fc2.b")

    def parameters(self) -> list[nm.Parameter]:
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
                self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b,
                self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]


class EncoderParams:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator, dtype, prefix: str):
        self.cfg = cfg
        d = cfg.dim
        self.pre_conv_w = None
        self.pre_conv_b = None
        self.pre_ln_g = None
        self.pre_ln_b = None
        if cfg.has_pre_conv:
            k, g = cfg.pre_conv_kernel, cfg.pre_conv_groups
            fan_in = (d // g) * k
            self.pre_conv_w = nm.Parameter(
                _trunc_normal(rng, (d, d // g, k), 1.0 / np.sqrt(fan_in), dtype),
                f"{prefix}.pre_conv.w")
            self.pre_conv_b = nm.Parameter(np.zeros(d, dtype=dtype), f"{prefix}.pre_conv.b")
            self.pre_ln_g = nm.Parameter(np.ones(d, dtype=dtype), f"{prefix}.pre_ln.gain")
            self.pre_ln_b = nm.Parameter(np.zeros(d, dtype=dtype), f"{prefix}.pre_ln.bias")
        self.layers = [LayerParams(cfg, rng, dtype, f"{prefix}.layer{i}")
                       for i in range(cfg.num_layers)]
        self.final_ln_g = None
        self.final_ln_b = None
        if cfg.num_layers > 0:
            self.final_ln_g = nm.Parameter(np.ones(d, dtype=dtype), f"{prefix}.final_ln.gain")
            self.final_ln_b = nm.Parameter(np.zeros(d, dtype=dtype), f"{prefix}.final_ln.bias")

    def parameters(self) -> list[nm.Parameter]:
        ps: list[nm.Parameter] = []
        if self.pre_conv_w is not None:
            ps += [self.pre_conv_w, self.pre_conv_b, self.pre_ln_g, self.pre_ln_b]
        for layer in self.layers:
            ps += layer.parameters()
        if self.final_ln_g is not None:
            ps += [self.final_ln_g, self.final_ln_b]
        return ps


def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    draw = rng.standard_normal(shape)
    for _ in range(8):
        bad = np.abs(draw) > 2.0
        if not bad.any():
            break
        draw[bad] = rng.standard_normal(int(bad.sum()))
    return (draw * std).astype(dtype)


def transformer_layer_forward(x: nm.Tensor, p: LayerParams, cfg: EncoderConfig,
                              rng: np.random.Generator | None = None) -> nm.Tensor:
    if x.shape[0] == 0:
        raise EmptySequenceError("transformer layer: empty input")
    rate = cfg.dropout if rng is not None else 0.0
    attn_in = nm.layer_norm(x, p.ln1_g, p.ln1_b)
    attn = nm.attention_block(attn_in, p.wq, p.wk, p.wv, p.wo, cfg.heads,
                              bq=p.bq, bk=p.bk, bv=p.bv, bo=p.bo)
    if rate > 0.0:
        attn = nm.dropout(attn, rate, rng)
    x = nm.add(x, attn)
    ffn_in = nm.layer_norm(x, p.ln2_g, p.ln2_b)
    h = nm.gelu(nm.affine(ffn_in, p.fc1_w, p.fc1_b))
    if rate > 0.0:
        h = nm.dropout(h, rate, rng)
    h = nm.affine(h, p.fc2_w, p.fc2_b)
    if rate > 0.0:
        h = nm.dropout(h, rate, rng)
    return nm.add(x, h)


def pre_conv_forward(x: nm.Tensor, params: EncoderParams) -> nm.Tensor:
    """Same-length grouped positional convolution added to the input, then LN."""
    cfg = params.cfg
    k = cfg.pre_conv_kernel
    length = x.shape[0]
    pad_left = (k - 1) // 2 + (1 - k % 2)  # even kernels get the extra sample in front
    pad_right = (k - 1) // 2
    padded = nm.pad_rows(x, length + pad_left + pad_right, at_front=pad_left)
    conv = nm.conv1d(padded, params.pre_conv_w, stride=1, groups=cfg.pre_conv_groups,
                     bias=params.pre_conv_b)
    conv = nm.fit_rows(conv, length)
    x = nm.add(x, nm.gelu(conv))
    return nm.layer_norm(x, params.pre_ln_g, params.pre_ln_b)


def encoder_forward(x: nm.Tensor, params: EncoderParams,
                    rng: np.random.Generator | None = None) -> EncoderOutput:
    if x.shape[0] == 0:
        raise EmptySequenceError("encoder: empty input")
    cfg = params.cfg
    if cfg.has_pre_conv:
        x = pre_conv_forward(x, params)
    per_layer: list[nm.Tensor] = []
    for i, layer in enumerate(params.layers):
        x = transformer_layer_forward(x, layer, cfg, rng)
        if i < cfg.num_layers - 1:
            per_layer.append(x)
    if cfg.num_layers > 0:
        x = nm.layer_norm(x, params.final_ln_g, params.final_ln_b)
        per_layer.append(x)
    return EncoderOutput(final=x, per_layer=per_layer)
