"""Differentiable primitives used by the model.

All functions take and return `Tensor`s and register their backward closure
on the output.  Layout convention throughout: sequences are (frames, channels)
2-D arrays; convolution kernels are (out_ch, in_ch/groups, k); transposed
convolution kernels are (in_ch, out_ch, k).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from ..errors import EmptySequenceError, InvalidUnitError, SequenceTooShortError, ShapeError
from .tensor import Tensor

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

LAYER_NORM_EPS = 1e-5
GROUP_NORM_EPS = 1e-5


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=False)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = Tensor(a.data + b.data, parents=(a, b))

    def bwd(g):
        a.accumulate_grad(g)
        b.accumulate_grad(g)

    out._backward = bwd
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c, parents=(x,))

    def bwd(g):
        x.accumulate_grad(g * c)

    out._backward = bwd
    return out


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"affine: input {x.shape} does not match weight {w.shape}")
    y = x.data @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"affine: bias {b.shape} does not match weight {w.shape}")
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = Tensor(y, parents=parents)

    def bwd(g):
        x.accumulate_grad(g @ w.data.T)
        w.accumulate_grad(x.data.reshape(-1, w.shape[0]).T @ g.reshape(-1, w.shape[1]))
        if b is not None:
            b.accumulate_grad(g.reshape(-1, w.shape[1]).sum(axis=0))

    out._backward = bwd
    return out


def embed_logits(x: Tensor, emb: Tensor, b: Tensor | None = None) -> Tensor:
    """Scores against a (K, D) embedding table: x @ emb.T (+ b)."""
    if x.shape[-1] != emb.shape[1]:
        raise ShapeError(f"embed_logits: input {x.shape} does not match table {emb.shape}")
    y = x.data @ emb.data.T
    if b is not None:
        y = y + b.data
    parents = (x, emb) if b is None else (x, emb, b)
    out = Tensor(y, parents=parents)

    def bwd(g):
        x.accumulate_grad(g @ emb.data)
        emb.accumulate_grad(g.reshape(-1, emb.shape[0]).T @ x.data.reshape(-1, emb.shape[1]))
        if b is not None:
            b.accumulate_grad(g.reshape(-1, emb.shape[0]).sum(axis=0))

    out._backward = bwd
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))
    out = Tensor(xd * cdf, parents=(x,))

    def bwd(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        x.accumulate_grad(g * (cdf + xd * pdf))

    out._backward = bwd
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-position normalization over the last (channel) axis."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: params {gain.shape}/{bias.shape} do not match input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, parents=(x, gain, bias))

    def bwd(g):
        lead = g.reshape(-1, g.shape[-1])
        xh = xhat.reshape(-1, g.shape[-1])
        gain.accumulate_grad((lead * xh).sum(axis=0))
        bias.accumulate_grad(lead.sum(axis=0))
        gy = g * gain.data
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * xhat).mean(axis=-1, keepdims=True)
        x.accumulate_grad(inv * (gy - m1 - xhat * m2))

    out._backward = bwd
    return out


def group_norm(x: Tensor, gain: Tensor, bias: Tensor, groups: int, eps: float = GROUP_NORM_EPS) -> Tensor:
    """Normalization per channel group, statistics over (frames, group channels)."""
    L, C = x.shape
    if C % groups:
        raise ShapeError(f"group_norm: channels {C} not divisible by groups {groups}")
    cg = C // groups
    xr = x.data.reshape(L, groups, cg)
    mu = xr.mean(axis=(0, 2), keepdims=True)
    xc = xr - mu
    var = (xc * xc).mean(axis=(0, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat.reshape(L, C) * gain.data + bias.data
    out = Tensor(y, parents=(x, gain, bias))

    def bwd(g):
        gain.accumulate_grad((g * xhat.reshape(L, C)).sum(axis=0))
        bias.accumulate_grad(g.sum(axis=0))
        gy = (g * gain.data).reshape(L, groups, cg)
        m1 = gy.mean(axis=(0, 2), keepdims=True)
        m2 = (gy * xhat).mean(axis=(0, 2), keepdims=True)
        gx = inv * (gy - m1 - xhat * m2)
        x.accumulate_grad(gx.reshape(L, C))

    out._backward = bwd
    return out


def softmax(x: Tensor) -> Tensor:
    """Stable softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, parents=(x,))

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        x.accumulate_grad(y * (g - dot))

    out._backward = bwd
    return out


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1, groups: int = 1,
           bias: Tensor | None = None) -> Tensor:
    """Valid (no padding) 1-D convolution on a (L, Cin) sequence.

    kernels: (Cout, Cin/groups, k); output (floor((L-k)/stride)+1, Cout).
    """
    L, cin = x.shape
    cout, cin_g, k = kernels.shape
    if cin % groups or cout % groups or cin_g != cin // groups:
        raise ShapeError(
            f"conv1d: kernels {kernels.shape} incompatible with input {x.shape} and groups {groups}")
    if L < k:
        raise SequenceTooShortError(L, k, "conv1d input")
    lout = (L - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=0)[::stride]  # (lout, cin, k)
    y = np.empty((lout, cout), dtype=x.data.dtype)
    cout_g = cout // groups
    for g_i in range(groups):
        ci = slice(g_i * cin_g, (g_i + 1) * cin_g)
        co = slice(g_i * cout_g, (g_i + 1) * cout_g)
        y[:, co] = np.einsum("lck,ock->lo", win[:, ci], kernels.data[co])
    if bias is not None:
        y = y + bias.data
    parents = (x, kernels) if bias is None else (x, kernels, bias)
    out = Tensor(y, parents=parents)

    def bwd(g):
        dW = np.zeros_like(kernels.data)
        dx = np.zeros_like(x.data)
        for g_i in range(groups):
            ci = slice(g_i * cin_g, (g_i + 1) * cin_g)
            co = slice(g_i * cout_g, (g_i + 1) * cout_g)
            dW[co] = np.einsum("lo,lck->ock", g[:, co], win[:, ci])
            for j in range(k):
                dx[j:j + stride * lout:stride, ci] += g[:, co] @ kernels.data[co, :, j]
        kernels.accumulate_grad(dW)
        x.accumulate_grad(dx)
        if bias is not None:
            bias.accumulate_grad(g.sum(axis=0))

    out._backward = bwd
    return out


def transposed_conv1d(x: Tensor, kernels: Tensor, stride: int = 1,
                      bias: Tensor | None = None) -> Tensor:
    """Transposed 1-D convolution; kernels (Cin, Cout, k), output ((L-1)*stride + k, Cout)."""
    L, cin = x.shape
    if L == 0:
        raise EmptySequenceError("transposed_conv1d: empty input")
    kcin, cout, k = kernels.shape
    if kcin != cin:
        raise ShapeError(f"transposed_conv1d: kernels {kernels.shape} incompatible with input {x.shape}")
    lout = (L - 1) * stride + k
    y = np.zeros((lout, cout), dtype=x.data.dtype)
    for j in range(k):
        sl = slice(j, j + stride * (L - 1) + 1, stride)
        y[sl] += x.data @ kernels.data[:, :, j]
    if bias is not None:
        y = y + bias.data
    parents = (x, kernels) if bias is None else (x, kernels, bias)
    out = Tensor(y, parents=parents)

    def bwd(g):
        dx = np.zeros_like(x.data)
        dW = np.zeros_like(kernels.data)
        for j in range(k):
            sl = slice(j, j + stride * (L - 1) + 1, stride)
            gj = g[sl]
            dx += gj @ kernels.data[:, :, j].T
            dW[:, :, j] = x.data.T @ gj
        x.accumulate_grad(dx)
        kernels.accumulate_grad(dW)
        if bias is not None:
            bias.accumulate_grad(g.sum(axis=0))

    out._backward = bwd
    return out


def skip_rows(x: Tensor, factor: int) -> Tensor:
    """Every factor-th row (indices 0, factor, 2*factor, ...)."""
    if x.shape[0] == 0:
        raise EmptySequenceError("skip_rows: empty input")
    taken = x.data[::factor].copy()
    out = Tensor(taken, parents=(x,))

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[::factor] = g
        x.accumulate_grad(dx)

    out._backward = bwd
    return out


def repeat_rows(x: Tensor, factor: int) -> Tensor:
    """Each row duplicated factor consecutive times."""
    if x.shape[0] == 0:
        raise EmptySequenceError("repeat_rows: empty input")
    out = Tensor(np.repeat(x.data, factor, axis=0), parents=(x,))

    def bwd(g):
        x.accumulate_grad(g.reshape(x.shape[0], factor, -1).sum(axis=1))

    out._backward = bwd
    return out


def slice_rows(x: Tensor, length: int) -> Tensor:
    out = Tensor(x.data[:length].copy(), parents=(x,))

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[:length] = g
        x.accumulate_grad(dx)

    out._backward = bwd
    return out


def pad_rows(x: Tensor, target_len: int, at_front: int = 0) -> Tensor:
    """Zero-pad rows up to target_len, optionally with at_front leading zeros."""
    L, c = x.shape
    tail = target_len - L - at_front
    if tail < 0:
        raise ShapeError(f"pad_rows: cannot pad length {L} (+{at_front} front) to {target_len}")
    y = np.zeros((target_len, c), dtype=x.data.dtype)
    y[at_front:at_front + L] = x.data
    out = Tensor(y, parents=(x,))

    def bwd(g):
        x.accumulate_grad(g[at_front:at_front + L])

    out._backward = bwd
    return out


def fit_rows(x: Tensor, target_len: int) -> Tensor:
    """Truncate or zero-pad the tail so the row count is exactly target_len."""
    if x.shape[0] == target_len:
        return x
    if x.shape[0] > target_len:
        return slice_rows(x, target_len)
    return pad_rows(x, target_len)


def mask_rows(x: Tensor, indices) -> Tensor:
    """Zero the given rows; remaining rows are copied bit-identically."""
    idx = np.asarray(list(indices), dtype=np.int64)
    y = x.data.copy()
    if idx.size:
        y[idx] = 0.0
    out = Tensor(y, parents=(x,))

    def bwd(g):
        dx = g.copy()
        if idx.size:
            dx[idx] = 0.0
        x.accumulate_grad(dx)

    out._backward = bwd
    return out


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul: (H, L, K) @ (H, K, M)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm: shapes {a.shape} and {b.shape} do not conform")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def bwd(g):
        a.accumulate_grad(g @ b.data.transpose(0, 2, 1))
        b.accumulate_grad(a.data.transpose(0, 2, 1) @ g)

    out._backward = bwd
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), parents=(x,))

    def bwd(g):
        x.accumulate_grad(g.reshape(x.shape))

    out._backward = bwd
    return out


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    out = Tensor(x.data.transpose(axes), parents=(x,))

    def bwd(g):
        x.accumulate_grad(g.transpose(inv))

    out._backward = bwd
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = Tensor(x.data * keep, parents=(x,))

    def bwd(g):
        x.accumulate_grad(g * keep)

    out._backward = bwd
    return out


def mean_scalar(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(np.asarray(x.data.mean()), parents=(x,))

    def bwd(g):
        x.accumulate_grad(np.full_like(x.data, float(g) / n))

    out._backward = bwd
    return out


def sum_scalar(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum()), parents=(x,))

    def bwd(g):
        x.accumulate_grad(np.full_like(x.data, float(g)))

    out._backward = bwd
    return out


def weighted_sum_scalars(terms: list[Tensor], weights) -> Tensor:
    """Weighted sum of scalar tensors (loss combination)."""
    if len(terms) != len(weights):
        raise ShapeError(f"weighted sum: {len(terms)} terms vs {len(weights)} weights")
    total = 0.0
    for t, w in zip(terms, weights):
        total = total + float(w) * t.data
    out = Tensor(np.asarray(total), parents=tuple(terms))

    def bwd(g):
        for t, w in zip(terms, weights):
            t.accumulate_grad(np.asarray(float(g) * float(w)))

    out._backward = bwd
    return out


def cross_entropy_masked(logits: Tensor, targets, mask_indices) -> tuple[Tensor, float]:
    """Mean negative log-softmax of the target class over the masked rows.

    Returns (loss, masked accuracy).  Empty mask yields a constant 0 loss and
    vacuous accuracy 1.0.
    """
    L, K = logits.shape
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != (L,):
        raise ShapeError(f"cross_entropy_masked: targets {t.shape} vs logits {logits.shape}")
    if t.size and (t.min() < 0 or t.max() >= K):
        bad = int(t[(t < 0) | (t >= K)][0])
        raise InvalidUnitError(f"target unit {bad} outside codebook range [0, {K})")
    idx = np.asarray(sorted(mask_indices), dtype=np.int64)
    if idx.size == 0:
        return Tensor(np.asarray(0.0, dtype=logits.data.dtype)), 1.0
    z = logits.data[idx]
    zmax = z.max(axis=1, keepdims=True)
    zs = z - zmax
    lse = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    picked = zs[np.arange(idx.size), t[idx]]
    losses = (lse.ravel() - picked)
    loss_val = losses.mean()
    acc = float((z.argmax(axis=1) == t[idx]).mean())
    out = Tensor(np.asarray(loss_val), parents=(logits,))

    def bwd(g):
        p = np.exp(zs - lse)
        p[np.arange(idx.size), t[idx]] -= 1.0
        dl = np.zeros_like(logits.data)
        dl[idx] = p * (float(g) / idx.size)
        logits.accumulate_grad(dl)

    out._backward = bwd
    return out, acc


def attention_block(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
                    heads: int, bq=None, bk=None, bv=None, bo=None,
                    attn_dropout: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    """Full bidirectional multi-head self-attention with output projection."""
    if x.shape[0] == 0:
        raise EmptySequenceError("attention_block: empty input")
    L, D = x.shape
    if D % heads:
        raise ShapeError(f"attention_block: dim {D} not divisible by heads {heads}")
    dh = D // heads

    def split(t: Tensor) -> Tensor:
        return transpose(reshape(t, (L, heads, dh)), (1, 0, 2))

    q = split(affine(x, wq, bq))
    k = split(affine(x, wk, bk))
    v = split(affine(x, wv, bv))
    scores = scale(bmm(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    attn = softmax(scores)
    if attn_dropout > 0.0 and rng is not None:
        attn = dropout(attn, attn_dropout, rng)
    ctx = bmm(attn, v)
    merged = reshape(transpose(ctx, (1, 0, 2)), (L, D))
    return affine(merged, wo, bo)
