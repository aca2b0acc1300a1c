"""Differentiable primitives over :class:`~spikequant.diffcore.engine.Tensor`.

Exactly the operations the rest of the package needs, no more.  Broadcasting
is restricted to the documented special cases (scalar second operand,
per-channel affine, trailing-shape add); anything else is a dimension error.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import DimensionError, ValidationError
from .engine import Tensor, emit
from ..kernels import (conv2d_forward, conv2d_backward_input,
                       conv2d_backward_kernel)

Array = np.ndarray


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _contig(a) -> Array:
    # np.ascontiguousarray promotes 0-d to 1-d; keep scalar shapes intact
    a = np.asarray(a)
    return a if a.flags["C_CONTIGUOUS"] else np.ascontiguousarray(a)


def _is_scalar_shaped(t: Tensor) -> bool:
    return t.data.size == 1


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b``.

    Accepts plain 2-d operands or identically batched stacks of matrices
    ([..., m, k] @ [..., k, n] with equal leading dimensions).
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.ndim != bd.ndim \
            or ad.shape[:-2] != bd.shape[:-2] or ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    out = np.matmul(ad, bd)

    def backward(g: Array):
        da = np.matmul(g, np.swapaxes(bd, -1, -2))
        db = np.matmul(np.swapaxes(ad, -1, -2), g)
        return da, db

    return emit("matmul", (a, b), out, backward)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation of ``x`` [B,Ci,H,W] with kernels ``w`` [Co,Ci,k,k]."""
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise DimensionError(
            f"conv2d: need 4-d input and kernel, got {xd.shape} and {wd.shape}")
    B, Ci, H, W = xd.shape
    Co, Ci2, kh, kw = wd.shape
    if Ci2 != Ci:
        raise DimensionError(
            f"conv2d: input channels {Ci} != kernel channels {Ci2} "
            f"(input {xd.shape}, kernel {wd.shape})")
    if kh != kw:
        raise DimensionError(f"conv2d: kernel must be square, got {wd.shape}")
    if stride < 1:
        raise ValidationError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValidationError(f"conv2d: padding must be >= 0, got {padding}")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise DimensionError(
            f"conv2d: kernel {wd.shape} larger than padded input {xd.shape} "
            f"with padding {padding}")
    out = conv2d_forward(xd, wd, stride, padding)

    def backward(g: Array):
        dx = conv2d_backward_input(g, wd, stride, padding, H, W)
        dw = conv2d_backward_kernel(g, xd, stride, padding, kh)
        return dx, dw

    return emit("conv2d", (x, w), out, backward)


# ---------------------------------------------------------------------------
# pointwise arithmetic
# ---------------------------------------------------------------------------

def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape and not _is_scalar_shaped(b):
        raise DimensionError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} differ and the "
            f"second operand is not a scalar")


def _reduce_to(g: Array, shape: tuple) -> Array:
    # collapse a full-shape gradient onto a scalar-shaped operand
    return np.sum(g).reshape(shape) if g.shape != shape else g


def add(a: Tensor, b) -> Tensor:
    """Pointwise ``a + b``; ``b`` may be a same-shape tensor or a scalar."""
    b = _as_tensor(b)
    _binary_shapes("add", a, b)
    out = a.data + b.data

    def backward(g: Array):
        return g, _reduce_to(g, b.data.shape)

    return emit("add", (a, b), out, backward)


def sub(a: Tensor, b) -> Tensor:
    """Pointwise ``a - b``; ``b`` may be a same-shape tensor or a scalar."""
    b = _as_tensor(b)
    _binary_shapes("sub", a, b)
    out = a.data - b.data

    def backward(g: Array):
        return g, _reduce_to(-g, b.data.shape)

    return emit("sub", (a, b), out, backward)


def mul(a: Tensor, b) -> Tensor:
    """Pointwise ``a * b``; ``b`` may be a same-shape tensor or a scalar."""
    b = _as_tensor(b)
    _binary_shapes("mul", a, b)
    ad, bd = a.data, b.data
    out = ad * bd

    def backward(g: Array):
        da = g * bd if bd.shape == ad.shape else g * bd.reshape(-1)[0]
        return da, _reduce_to(g * ad, bd.shape)

    return emit("mul", (a, b), out, backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a plain (non-differentiable) constant."""
    c = float(c)
    out = a.data * c

    def backward(g: Array):
        return (g * c,)

    return emit("scale", (a,), out, backward)


def powc(a: Tensor, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a constant exponent; requires ``a > 0``."""
    p = float(p)
    ad = a.data
    if np.any(ad <= 0.0):
        raise ValidationError("powc: base must be strictly positive")
    out = ad ** p

    def backward(g: Array):
        return (g * p * ad ** (p - 1.0),)

    return emit("powc", (a,), out, backward)


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)
    src = a.data.shape

    def backward(g: Array):
        return (g.reshape(src),)

    return emit("reshape", (a,), _contig(out), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(i) for i in axes)
    if sorted(axes) != list(range(a.data.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {a.data.shape}")
    inv = tuple(np.argsort(axes))
    out = _contig(np.transpose(a.data, axes))

    def backward(g: Array):
        return (_contig(np.transpose(g, inv)),)

    return emit("transpose", (a,), out, backward)


def select(a: Tensor, index: int) -> Tensor:
    """Slice out ``a[index]`` along axis 0."""
    n = a.data.shape[0]
    if not 0 <= index < n:
        raise ValidationError(f"select: index {index} out of range for axis of size {n}")
    out = _contig(a.data[index])

    def backward(g: Array):
        da = np.zeros_like(a.data)
        da[index] = g
        return (da,)

    return emit("select", (a,), out, backward)


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape tensors along a new leading axis."""
    parts = list(parts)
    if not parts:
        raise ValidationError("stack: need at least one tensor")
    shape0 = parts[0].data.shape
    for p in parts:
        if p.data.shape != shape0:
            raise DimensionError(
                f"stack: mismatched shapes {shape0} and {p.data.shape}")
    out = np.stack([p.data for p in parts], axis=0)

    def backward(g: Array):
        return tuple(g[i] for i in range(len(parts)))

    return emit("stack", parts, out, backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axes(axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def reduce_sum(a: Tensor, axes=None) -> Tensor:
    """Sum over the given axes (all axes when ``axes`` is None)."""
    ax = _norm_axes(axes, a.data.ndim)
    out = np.sum(a.data, axis=ax)
    src = a.data.shape

    def backward(g: Array):
        ge = np.expand_dims(g, ax) if g.ndim else g
        return (np.broadcast_to(ge, src).copy(),)

    return emit("sum", (a,), out, backward)


def mean(a: Tensor, axes=None) -> Tensor:
    """Arithmetic mean over the given axes (all axes when ``axes`` is None)."""
    ax = _norm_axes(axes, a.data.ndim)
    count = 1
    for i in ax:
        count *= a.data.shape[i]
    out = np.mean(a.data, axis=ax)
    src = a.data.shape

    def backward(g: Array):
        ge = np.expand_dims(g, ax) if g.ndim else g
        return (np.broadcast_to(ge, src).copy() / count,)

    return emit("mean", (a,), out, backward)


# ---------------------------------------------------------------------------
# structured broadcasts
# ---------------------------------------------------------------------------

def channel_affine(x: Tensor, gamma: Tensor, beta: Tensor, axis: int) -> Tensor:
    """Per-channel scale and shift: ``y = x * gamma + beta`` along ``axis``.

    ``gamma`` and ``beta`` are 1-d with length ``x.shape[axis]``; every other
    axis is broadcast.
    """
    xd = x.data
    axis = axis % xd.ndim
    C = xd.shape[axis]
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise DimensionError(
            f"channel_affine: need 1-d scale/shift of length {C}, got "
            f"{gamma.data.shape} and {beta.data.shape}")
    bshape = [1] * xd.ndim
    bshape[axis] = C
    gm = gamma.data.reshape(bshape)
    bt = beta.data.reshape(bshape)
    out = xd * gm + bt
    other = tuple(i for i in range(xd.ndim) if i != axis)

    def backward(g: Array):
        dx = g * gm
        dgamma = np.sum(g * xd, axis=other)
        dbeta = np.sum(g, axis=other)
        return dx, dgamma, dbeta

    return emit("channel_affine", (x, gamma, beta), out, backward)


def add_trailing(x: Tensor, p: Tensor) -> Tensor:
    """Add ``p`` broadcast over the leading axes of ``x``.

    ``p.shape`` must equal the trailing ``p.ndim`` axes of ``x.shape``;
    used for position embeddings shared across time and batch.
    """
    xd, pd = x.data, p.data
    if pd.ndim > xd.ndim or xd.shape[xd.ndim - pd.ndim:] != pd.shape:
        raise DimensionError(
            f"add_trailing: trailing shape {pd.shape} does not match {xd.shape}")
    out = xd + pd
    lead = tuple(range(xd.ndim - pd.ndim))

    def backward(g: Array):
        dp = np.sum(g, axis=lead) if lead else g.copy()
        return g, dp

    return emit("add_trailing", (x, p), out, backward)


# ---------------------------------------------------------------------------
# custom-gradient hook
# ---------------------------------------------------------------------------

def custom_grad(forward: Callable[[Array], Array],
                backward_mask: Callable[[Array], Array],
                name: str = "custom") -> Callable[[Tensor], Tensor]:
    """Build a differentiable op from a pure forward and a gradient mask.

    The returned op applies ``forward`` to the data and, on the way back,
    multiplies the upstream gradient elementwise by ``backward_mask(input)``.
    This is the hook through which straight-through estimators and surrogate
    spike gradients enter the graph.  ``forward`` must be shape-preserving.
    """

    def apply(x: Tensor) -> Tensor:
        xd = x.data
        out = np.asarray(forward(xd), dtype=np.float64)
        if out.shape != xd.shape:
            raise DimensionError(
                f"{name}: forward changed shape {xd.shape} -> {out.shape}")

        def backward(g: Array):
            mask = np.asarray(backward_mask(xd), dtype=np.float64)
            if mask.shape != xd.shape:
                raise DimensionError(
                    f"{name}: backward mask shape {mask.shape} != input "
                    f"shape {xd.shape}")
            return (g * mask,)

        return emit(name, (x,), out, backward)

    return apply


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def softmax_lastdim(a: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    ad = a.data
    shifted = ad - np.max(ad, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g: Array):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot),)

    return emit("softmax", (a,), out, backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``.

    ``logits`` is [B, K]; ``labels`` an integer sequence of length B with
    values in [0, K).
    """
    ld = logits.data
    if ld.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy: logits must be 2-d, got {ld.shape}")
    B, K = ld.shape
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    if lab.shape[0] != B:
        raise ValidationError(
            f"softmax_cross_entropy: {lab.shape[0]} labels for batch of {B}")
    if lab.min(initial=0) < 0 or lab.max(initial=0) >= K:
        raise ValidationError(
            f"softmax_cross_entropy: labels must lie in [0, {K}), got "
            f"range [{lab.min()}, {lab.max()}]")
    shifted = ld - np.max(ld, axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    nll = logz - shifted[np.arange(B), lab]
    out = np.asarray(np.mean(nll))
    probs = np.exp(shifted) / np.sum(np.exp(shifted), axis=1, keepdims=True)

    def backward(g: Array):
        d = probs.copy()
        d[np.arange(B), lab] -= 1.0
        return (d * (float(g) / B),)

    return emit("softmax_cross_entropy", (logits,), out, backward)
