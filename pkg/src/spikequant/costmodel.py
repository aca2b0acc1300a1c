"""Analytic per-layer hardware energy and storage model.

Per-operation energies (picojoules, 45nm-class estimates):

    format  mult  add   shift  dram
    FP32    3.7   1.1   0.13   650
    INT8    0.2   0.03  0.024  163

A layer's energy is ``#ops * (C_mult + C_add) + #bits * C_dram`` when its
multiplies run on integer multipliers (uniform quantization, and full
precision on the FP32 row), or ``#ops * (C_shift + C_add) + #bits * C_dram``
when they reduce to shifts (power-of-two quantization).  ``#ops`` counts
multiplications, ``#bits`` counts stored weight bits; DRAM cost is applied
per stored bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor, mul, reduce_sum, add
from .errors import ValidationError
from .quantizers import CHOICES, QuantChoice


@dataclass(frozen=True)
class EnergyRow:
    mult: float
    add: float
    shift: float
    dram: float


@dataclass(frozen=True)
class EnergyTable:
    """Energy per operation (pJ) for the two hardware number formats."""

    fp32: EnergyRow = field(default_factory=lambda: EnergyRow(3.7, 1.1, 0.13, 650.0))
    int8: EnergyRow = field(default_factory=lambda: EnergyRow(0.2, 0.03, 0.024, 163.0))

    def row_for(self, choice: QuantChoice) -> EnergyRow:
        # quantized 2/4-bit choices run on integer hardware: INT8 row
        return self.fp32 if choice is QuantChoice.FP32 else self.int8


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one linear or convolution layer.

    linear: ``f_in`` x ``f_out`` weights applied to ``d`` input vectors
    (token count x time steps).  conv: ``k`` x ``k`` kernels over ``c_in`` ->
    ``c_out`` channels at ``s_img`` input positions (H * W).
    """

    kind: str  # "linear" | "conv"
    f_in: int = 0
    f_out: int = 0
    d: int = 0
    k: int = 0
    c_in: int = 0
    c_out: int = 0
    s_img: int = 0
    component: str = ""

    def __post_init__(self):
        if self.kind == "linear":
            dims = (self.f_in, self.f_out, self.d)
        elif self.kind == "conv":
            dims = (self.k, self.c_in, self.c_out, self.s_img)
        else:
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if any(v <= 0 for v in dims):
            raise ValidationError(f"layer dimensions must be positive: {self}")

    @staticmethod
    def linear(f_in: int, f_out: int, d: int, component: str = "") -> "LayerSpec":
        return LayerSpec(kind="linear", f_in=f_in, f_out=f_out, d=d,
                         component=component)

    @staticmethod
    def conv(k: int, c_in: int, c_out: int, s_img: int,
             component: str = "") -> "LayerSpec":
        return LayerSpec(kind="conv", k=k, c_in=c_in, c_out=c_out, s_img=s_img,
                         component=component)

    @property
    def param_count(self) -> int:
        """Number of weight elements (biases and affines are not counted)."""
        if self.kind == "linear":
            return self.f_in * self.f_out
        return self.k * self.k * self.c_in * self.c_out


@dataclass(frozen=True)
class LayerCost:
    ops: int
    bits: int
    energy_pj: float

    @property
    def storage_bits(self) -> int:
        return self.bits


def count_ops(spec: LayerSpec) -> int:
    """Number of multiplications one inference performs in this layer."""
    if spec.kind == "linear":
        return spec.f_in * spec.f_out * spec.d
    return spec.k * spec.k * spec.c_in * spec.c_out * spec.s_img


def count_bits(spec: LayerSpec, bits: int) -> int:
    """Weight storage of this layer in bits at the given width."""
    if spec.kind == "linear":
        return spec.f_in * spec.f_out * bits
    return spec.k * spec.k * spec.c_in * spec.c_out * bits


def layer_cost(spec: LayerSpec, choice: QuantChoice,
               table: EnergyTable | None = None) -> LayerCost:
    """Energy (pJ) and storage of one layer under one quantization choice."""
    table = table or EnergyTable()
    ops = count_ops(spec)
    bits = count_bits(spec, choice.bits)
    row = table.row_for(choice)
    per_op = (row.shift + row.add) if choice.is_pot else (row.mult + row.add)
    return LayerCost(ops=ops, bits=bits, energy_pj=ops * per_op + bits * row.dram)


def candidate_costs(spec: LayerSpec, table: EnergyTable | None = None) -> list[float]:
    """Per-choice energies in canonical candidate order."""
    return [layer_cost(spec, c, table).energy_pj for c in CHOICES]


def expected_supernet_cost(costs, sel_weights) -> Tensor:
    """Selection-probability-weighted energy of the whole supernet.

    ``costs`` and ``sel_weights`` are parallel per-layer sequences of
    length-MP vectors; each weight vector must sum to 1 (within 1e-6).
    The result is a scalar tensor, differentiable in the selection weights
    when those are graph tensors.
    """
    if len(costs) != len(sel_weights):
        raise ValidationError(
            f"{len(costs)} cost vectors vs {len(sel_weights)} weight vectors")
    total: Tensor | None = None
    for li, (c, w) in enumerate(zip(costs, sel_weights)):
        wt = w if isinstance(w, Tensor) else Tensor(np.asarray(w, dtype=np.float64))
        cv = np.asarray(c, dtype=np.float64)
        if wt.data.shape != cv.shape:
            raise ValidationError(
                f"layer {li}: {cv.shape} costs vs {wt.data.shape} weights")
        ssum = float(np.sum(wt.data))
        if abs(ssum - 1.0) > 1e-6:
            raise ValidationError(
                f"layer {li}: selection weights sum to {ssum}, expected 1")
        term = reduce_sum(mul(wt, Tensor(cv)))
        total = term if total is None else add(total, term)
    if total is None:
        raise ValidationError("expected_supernet_cost needs at least one layer")
    return total


#: Component groups reported in breakdowns, in display order.
COMPONENT_GROUPS = ("tokenizer", "attention", "mlp", "head")


def component_group(tag: str) -> str:
    """Collapse fine-grained tags (attention.query, ...) onto report groups."""
    base = tag.split(".")[0]
    if base not in COMPONENT_GROUPS:
        raise ValidationError(f"unknown component tag {tag!r}")
    return base


def model_summary(specs: list[LayerSpec], choices: list[QuantChoice],
                  table: EnergyTable | None = None) -> dict:
    """Whole-model storage/energy roll-up with a per-component breakdown.

    storage_mb uses 2^20-byte megabytes; avg_bits is the parameter-count
    weighted mean bit width; energy_mj converts the pJ total.
    """
    if len(specs) != len(choices):
        raise ValidationError(
            f"{len(specs)} layer specs vs {len(choices)} choices")
    table = table or EnergyTable()
    per_group = {g: {"energy_pj": 0.0, "storage_bits": 0, "params": 0, "ops": 0}
                 for g in COMPONENT_GROUPS}
    per_tag: dict[str, dict] = {}
    total_energy = 0.0
    total_bits = 0
    total_params = 0
    weighted_bits = 0
    for spec, choice in zip(specs, choices):
        cost = layer_cost(spec, choice, table)
        grp = component_group(spec.component)
        bucket = per_group[grp]
        bucket["energy_pj"] += cost.energy_pj
        bucket["storage_bits"] += cost.bits
        bucket["params"] += spec.param_count
        bucket["ops"] += cost.ops
        tag_bucket = per_tag.setdefault(
            spec.component, {"energy_pj": 0.0, "storage_bits": 0, "params": 0})
        tag_bucket["energy_pj"] += cost.energy_pj
        tag_bucket["storage_bits"] += cost.bits
        tag_bucket["params"] += spec.param_count
        total_energy += cost.energy_pj
        total_bits += cost.bits
        total_params += spec.param_count
        weighted_bits += spec.param_count * choice.bits
    return {
        "storage_mb": total_bits / 8 / 2 ** 20,
        "avg_bits": weighted_bits / total_params,
        "energy_mj": total_energy / 1e9,
        "total_energy_pj": total_energy,
        "total_storage_bits": total_bits,
        "total_params": total_params,
        "per_component": per_group,
        "per_tag": per_tag,
    }
