"""Finite-difference verification of recorded gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .engine import Tape, Tensor


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Compare the taped gradient of ``f`` at ``x`` against central differences.

    Returns ``max_i |analytic_i - fd_i| / max(1, |analytic_i|)``.  ``f`` must
    map a tensor to a scalar tensor and be free of custom-gradient ops in the
    region probed (those are checked exactly, not numerically).
    """
    probe = Tensor(x.data, requires_grad=True)
    with Tape() as tape:
        y = f(probe)
    analytic = tape.backward(y).of(probe)

    flat = x.data.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        hi = flat.copy()
        lo = flat.copy()
        hi[i] += eps
        lo[i] -= eps
        y_hi = f(Tensor(hi.reshape(x.data.shape))).data
        y_lo = f(Tensor(lo.reshape(x.data.shape))).data
        fd[i] = (float(y_hi) - float(y_lo)) / (2.0 * eps)
    fd = fd.reshape(x.data.shape)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - fd) / denom))
