"""Uniform and power-of-two weight quantizers with straight-through gradients.

Five per-layer configurations are searchable: full precision, 2/4-bit uniform
(asymmetric integer grid), and 2/4-bit power-of-two (signed powers of two
scaled by a power-of-two factor, so multiplies become shifts).  Rounding is
half-to-even everywhere.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, custom_grad
from .errors import ValidationError

Array = np.ndarray


class QuantChoice(enum.Enum):
    """One of the five per-layer quantization configurations."""

    FP32 = "fp32"
    U2 = "2u"
    U4 = "4u"
    P2 = "2l"
    P4 = "4l"

    @property
    def bits(self) -> int:
        return {"fp32": 32, "2u": 2, "4u": 4, "2l": 2, "4l": 4}[self.value]

    @property
    def is_uniform(self) -> bool:
        return self in (QuantChoice.U2, QuantChoice.U4)

    @property
    def is_pot(self) -> bool:
        return self in (QuantChoice.P2, QuantChoice.P4)

    @classmethod
    def from_name(cls, name: str) -> "QuantChoice":
        for c in cls:
            if c.value == name:
                return c
        raise ValidationError(
            f"unknown quantization choice {name!r}; expected one of "
            f"{[c.value for c in cls]}")


#: Canonical candidate order used by the search and all reports.
CHOICES: tuple[QuantChoice, ...] = (
    QuantChoice.FP32, QuantChoice.U2, QuantChoice.U4,
    QuantChoice.P2, QuantChoice.P4,
)


def grid_cardinality(choice: QuantChoice) -> int | None:
    """Maximum number of distinct values a quantized tensor can take.

    Uniform: 2^b grid points.  Power-of-two: zero plus 2^(b-1) magnitudes
    with both signs, i.e. 2^b + 1.  Full precision: unbounded (None).
    """
    if choice is QuantChoice.FP32:
        return None
    if choice.is_uniform:
        return 2 ** choice.bits
    return 2 ** choice.bits + 1


@dataclass(frozen=True)
class UniformParams:
    """Scale, zero point, and bit width of the asymmetric integer grid."""

    scale: float
    zero_point: float
    bits: int

    def __post_init__(self):
        if not self.scale > 0:
            raise ValidationError(f"uniform scale must be positive, got {self.scale}")
        if not 0 <= self.zero_point <= 2 ** self.bits - 1:
            raise ValidationError(
                f"zero point {self.zero_point} outside [0, {2 ** self.bits - 1}]")
        if self.bits < 2:
            raise ValidationError(f"uniform bits must be >= 2, got {self.bits}")


@dataclass(frozen=True)
class PowerOfTwoParams:
    """Power-of-two scale factor and bit width."""

    scale: float
    bits: int

    def __post_init__(self):
        if self.scale <= 0 or not math.log2(self.scale).is_integer():
            raise ValidationError(
                f"power-of-two scale must be an exact power of two, got {self.scale}")
        if self.bits < 2:
            raise ValidationError(f"pot bits must be >= 2, got {self.bits}")


def _weights_array(weights) -> Array:
    arr = weights.data if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float64)
    if arr.size == 0:
        raise ValidationError("cannot calibrate an empty tensor")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("cannot calibrate non-finite weights")
    return arr


def calibrate_uniform(weights, bits: int) -> UniformParams:
    """Min-max asymmetric calibration of the integer grid.

    s = (max - min) / (2^b - 1), z = round(-min / s) clamped to the grid.
    A constant tensor degenerates to s = 1, z = 0.
    """
    if bits < 2:
        raise ValidationError(f"uniform bits must be >= 2, got {bits}")
    arr = _weights_array(weights)
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        return UniformParams(scale=1.0, zero_point=0.0, bits=bits)
    s = (hi - lo) / (2 ** bits - 1)
    z = float(np.clip(np.round(-lo / s), 0, 2 ** bits - 1))
    return UniformParams(scale=s, zero_point=z, bits=bits)


def uniform_quantize_array(theta: Array, p: UniformParams) -> tuple[Array, Array]:
    """Quantize onto the uniform grid; also return the STE pass-through mask.

    theta_int = clamp(round(theta/s) + z, 0, 2^b - 1) and the dequantized
    value is s * (theta_int - z).  The mask is 1 where the pre-clamp integer
    already lies on the grid (clipped straight-through estimator).
    """
    qmax = 2 ** p.bits - 1
    pre = np.round(theta / p.scale) + p.zero_point
    inside = (pre >= 0) & (pre <= qmax)
    theta_int = np.clip(pre, 0, qmax)
    qhat = p.scale * (theta_int - p.zero_point)
    return qhat, inside.astype(np.float64)


def calibrate_pot(weights, bits: int) -> PowerOfTwoParams:
    """Scale = 2^floor(log2(max |theta|)).

    The magnitude maximum is used so that symmetric (and all-negative)
    tensors calibrate sensibly.  An all-zero tensor warns and falls back to
    scale 1.
    """
    if bits < 2:
        raise ValidationError(f"pot bits must be >= 2, got {bits}")
    arr = _weights_array(weights)
    m = float(np.max(np.abs(arr)))
    if m == 0.0:
        warnings.warn("all-zero tensor: power-of-two scale defaults to 1",
                      RuntimeWarning, stacklevel=2)
        return PowerOfTwoParams(scale=1.0, bits=bits)
    return PowerOfTwoParams(scale=float(2.0 ** math.floor(math.log2(m))), bits=bits)


def pot_quantize_array(theta: Array, p: PowerOfTwoParams) -> tuple[Array, Array]:
    """Quantize to signed powers of two; also return the STE mask.

    After scaling by 1/s: magnitudes below 2^(-2^(b-1)+1) collapse to the
    dead zone at 0, magnitudes above 1 saturate to +/-1, and everything in
    between rounds down to the nearest power of two.  The result is
    rescaled by s.  Gradient passes through wherever |theta/s| <= 1
    (including the dead zone) and is zero in the saturated region.
    """
    ts = theta / p.scale
    a = np.abs(ts)
    thr = 2.0 ** (-(2 ** (p.bits - 1)) + 1)
    dead = a < thr
    sat = a > 1.0
    mid = ~dead & ~sat
    qs = np.zeros_like(ts)
    qs[sat] = np.sign(ts[sat])
    if np.any(mid):
        qs[mid] = np.sign(ts[mid]) * 2.0 ** np.floor(np.log2(a[mid]))
    mask = (a <= 1.0).astype(np.float64)
    return qs * p.scale, mask


def uniform_quantize(theta: Tensor, p: UniformParams) -> Tensor:
    """Differentiable uniform quantization (clipped STE backward)."""
    op = custom_grad(
        lambda x: uniform_quantize_array(x, p)[0],
        lambda x: uniform_quantize_array(x, p)[1],
        name="uniform_quantize")
    return op(theta)


def pot_quantize(theta: Tensor, p: PowerOfTwoParams) -> Tensor:
    """Differentiable power-of-two quantization (saturation-clipped STE)."""
    op = custom_grad(
        lambda x: pot_quantize_array(x, p)[0],
        lambda x: pot_quantize_array(x, p)[1],
        name="pot_quantize")
    return op(theta)


def apply_quant(theta: Tensor, choice: QuantChoice) -> Tensor:
    """Quantize a weight tensor under one search candidate.

    Calibration is recomputed from the current weight values on every call
    (dynamic calibration during quantization-aware training); FP32 returns
    the tensor unchanged.
    """
    if choice is QuantChoice.FP32:
        return theta
    if choice.is_uniform:
        return uniform_quantize(theta, calibrate_uniform(theta, choice.bits))
    return pot_quantize(theta, calibrate_pot(theta, choice.bits))


def apply_quant_array(theta: Array, choice: QuantChoice) -> Array:
    """Non-differentiable counterpart of :func:`apply_quant` for extraction."""
    if choice is QuantChoice.FP32:
        return np.asarray(theta, dtype=np.float64)
    if choice.is_uniform:
        return uniform_quantize_array(theta, calibrate_uniform(theta, choice.bits))[0]
    return pot_quantize_array(theta, calibrate_pot(theta, choice.bits))[0]
