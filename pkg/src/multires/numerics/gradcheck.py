"""Central-difference verification of reverse-mode gradients."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NumericError
from .tensor import Parameter, Tensor, backward


def grad_check(fn, params, eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of a scalar function against central differences.

    fn is a zero-argument callable returning a scalar Tensor built from the
    given parameters; every parameter coordinate is perturbed by +-eps.
    Returns the maximum relative error
    |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    params = list(params)
    for p in params:
        if not isinstance(p, Parameter):
            raise TypeError("grad_check expects Parameter leaves")
        p.zero_grad()
    out = fn()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise NumericError("grad_check: fn must return a scalar Tensor")
    backward(out)
    analytic = {id(p): p.grad.copy() for p in params}

    def evaluate() -> float:
        v = float(fn().data)
        return v

    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        g_flat = analytic[id(p)].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = evaluate()
            flat[i] = orig - eps
            f_minus = evaluate()
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise NumericError(f"non-finite function value at {p.name}[{i}]")
            fd = (f_plus - f_minus) / (2.0 * eps)
            ga = float(g_flat[i])
            rel = abs(ga - fd) / max(1e-8, abs(ga) + abs(fd))
            worst = max(worst, rel)
    return worst


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        total += float(np.sum(p.grad * p.grad))
    return math.sqrt(total)
