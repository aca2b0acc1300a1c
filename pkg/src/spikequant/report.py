"""Report assembly and the figure-ready CSV emitters.

Percentages in the summary are taken against the all-full-precision baseline
of the same architecture; component shares are fractions of the reported
model's own totals and sum to 100.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .costmodel import (COMPONENT_GROUPS, EnergyTable, model_summary)
from .errors import FormatError, ValidationError
from .quantizers import CHOICES, QuantChoice, apply_quant_array, grid_cardinality
from .spiketransformer import ModelConfig, enumerate_layer_specs

ATTENTION_ROLES = ("query", "key", "value", "output")


def architecture_choices(config: ModelConfig, mapping: dict) -> dict:
    """Validate a layer-name -> choice-name mapping against the layer map."""
    specs = enumerate_layer_specs(config)
    choices = {}
    for name, _tag, _spec in specs:
        if name not in mapping:
            raise ValidationError(f"architecture is missing layer {name!r}")
        choices[name] = QuantChoice.from_name(mapping[name])
    extra = set(mapping) - {name for name, _, _ in specs}
    if extra:
        raise ValidationError(
            f"architecture names unknown layers: {sorted(extra)}")
    return choices


def build_report(config: ModelConfig, choices: dict,
                 table: EnergyTable | None = None,
                 accuracy: float | None = None,
                 assumptions: list | None = None) -> dict:
    table = table or EnergyTable()
    named = enumerate_layer_specs(config)
    specs = [spec for _, _, spec in named]
    choice_list = [choices[name] for name, _, _ in named]
    summary = model_summary(specs, choice_list, table)
    baseline = model_summary(specs, [QuantChoice.FP32] * len(specs), table)

    per_component = {}
    for group in COMPONENT_GROUPS:
        bucket = summary["per_component"][group]
        per_component[group] = {
            "energy_mj": bucket["energy_pj"] / 1e9,
            "storage_mb": bucket["storage_bits"] / 8 / 2 ** 20,
            "energy_share_pct": 100.0 * bucket["energy_pj"]
                                / summary["total_energy_pj"],
            "storage_share_pct": 100.0 * bucket["storage_bits"]
                                 / summary["total_storage_bits"],
            "params": bucket["params"],
        }

    attn_total_e = sum(summary["per_tag"].get(f"attention.{r}",
                                              {"energy_pj": 0.0})["energy_pj"]
                       for r in ATTENTION_ROLES)
    attn_total_s = sum(summary["per_tag"].get(f"attention.{r}",
                                              {"storage_bits": 0})["storage_bits"]
                       for r in ATTENTION_ROLES)
    attention_detail = {}
    for role in ATTENTION_ROLES:
        tag = summary["per_tag"].get(
            f"attention.{role}", {"energy_pj": 0.0, "storage_bits": 0})
        attention_detail[role] = {
            "energy_share_pct": 100.0 * tag["energy_pj"] / attn_total_e
                                if attn_total_e else 0.0,
            "storage_share_pct": 100.0 * tag["storage_bits"] / attn_total_s
                                 if attn_total_s else 0.0,
        }

    per_layer = {}
    for name, _tag, spec in named:
        choice = choices[name]
        from .costmodel import layer_cost
        cost = layer_cost(spec, choice, table)
        per_layer[name] = {
            "choice": choice.value,
            "bits": choice.bits,
            "energy_pj": cost.energy_pj,
            "storage_bits": cost.bits,
            "params": spec.param_count,
        }

    return {
        "summary": {
            "accuracy": accuracy,
            "storage_mb": summary["storage_mb"],
            "storage_pct": 100.0 * summary["total_storage_bits"]
                           / baseline["total_storage_bits"],
            "avg_bits": summary["avg_bits"],
            "energy_mj": summary["energy_mj"],
            "energy_pct": 100.0 * summary["total_energy_pj"]
                          / baseline["total_energy_pj"],
        },
        "baseline": {
            "storage_mb": baseline["storage_mb"],
            "energy_mj": baseline["energy_mj"],
        },
        "per_component": per_component,
        "attention_detail": attention_detail,
        "per_layer": per_layer,
        "assumptions": assumptions or [],
    }


def format_report_table(report: dict) -> str:
    s = report["summary"]
    acc = "n/a" if s["accuracy"] is None else f"{s['accuracy']:.4f}"
    lines = [
        f"{'accuracy':<12} {acc}",
        f"{'storage':<12} {s['storage_mb']:.4f} MB ({s['storage_pct']:.2f}% of fp32)",
        f"{'avg bits':<12} {s['avg_bits']:.2f}",
        f"{'energy':<12} {s['energy_mj']:.4f} mJ ({s['energy_pct']:.2f}% of fp32)",
        "",
        f"{'component':<12} {'energy %':>9} {'storage %':>10}",
    ]
    for group, row in report["per_component"].items():
        lines.append(f"{group:<12} {row['energy_share_pct']:>9.2f} "
                     f"{row['storage_share_pct']:>10.2f}")
    return "\n".join(lines)


def write_json(path, payload: dict) -> None:
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# trace CSV
# ---------------------------------------------------------------------------

TRACE_COLUMNS = ("epoch", "block", "layer", "choice_name", "probability",
                 "lambda", "L_acc", "L_hw", "L_total")


def write_trace_csv(path, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in rows:
        writer.writerow([r.epoch, r.block, r.layer, r.choice_name,
                         repr(r.probability), repr(r.lam), repr(r.l_acc),
                         repr(r.l_hw), repr(r.l_total)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_trace_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_COLUMNS:
            raise FormatError(f"{path}: row 1: bad trace header {header}")
        for i, row in enumerate(reader, start=2):
            if len(row) != len(TRACE_COLUMNS):
                raise FormatError(
                    f"{path}: row {i}: expected {len(TRACE_COLUMNS)} fields, "
                    f"got {len(row)}")
            try:
                rows.append({
                    "epoch": int(row[0]), "block": row[1], "layer": row[2],
                    "choice_name": row[3], "probability": float(row[4]),
                    "lambda": float(row[5]), "L_acc": float(row[6]),
                    "L_hw": float(row[7]), "L_total": float(row[8])})
            except ValueError as err:
                raise FormatError(f"{path}: row {i}: {err}")
    return rows


# ---------------------------------------------------------------------------
# figure-ready bundles
# ---------------------------------------------------------------------------

def emit_probability_evolution(trace_rows: list[dict], path) -> None:
    """Wide CSV: one row per (epoch, layer), one column per choice."""
    names = [c.value for c in CHOICES]
    table: dict[tuple, dict] = {}
    for r in trace_rows:
        table.setdefault((r["epoch"], r["layer"]), {})[r["choice_name"]] = \
            r["probability"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "layer"] + names)
    for (epoch, layer), probs in sorted(table.items()):
        writer.writerow([epoch, layer] + [repr(probs.get(n, 0.0)) for n in names])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def emit_component_breakdown(report: dict, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["component", "energy_share_pct", "storage_share_pct",
                     "energy_mj", "storage_mb"])
    for group, row in report["per_component"].items():
        writer.writerow([group, repr(row["energy_share_pct"]),
                         repr(row["storage_share_pct"]),
                         repr(row["energy_mj"]), repr(row["storage_mb"])])
    for role, row in report["attention_detail"].items():
        writer.writerow([f"attention.{role}", repr(row["energy_share_pct"]),
                         repr(row["storage_share_pct"]), "", ""])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def emit_weight_quantiles(model, choices: dict, path) -> None:
    """Per-layer weight quantiles before and after quantization.

    The model's handle weights are the trained full-precision masters; the
    post rows requantize them under the extracted choice.
    """
    qs = (5, 25, 50, 75, 95)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer", "choice", "stage", "p5", "p25", "p50", "p75",
                     "p95", "distinct_values"])
    for h in model.handles:
        choice = choices[h.name]
        pre = h.weight.data.reshape(-1)
        post = apply_quant_array(pre, choice)
        for stage, values in (("pre", pre), ("post", post)):
            pcts = np.percentile(values, qs)
            writer.writerow([h.name, choice.value, stage]
                            + [repr(float(p)) for p in pcts]
                            + [len(np.unique(values))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
