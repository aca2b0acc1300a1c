"""Command-line front end: search, train, eval, cost, and report workflows.

Exit codes: 0 success, 2 configuration/validation problems (with line or
field diagnostics), 3 numeric divergence during search.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .quantizers import apply_quant_array
from .data import generate_synthetic, load_dataset
from .errors import ConfigurationError, FormatError, ValidationError
from .quantizers import QuantChoice
from .report import (architecture_choices, build_report,
                     emit_component_breakdown, emit_probability_evolution,
                     emit_weight_quantiles, format_report_table,
                     read_trace_csv, write_json, write_trace_csv)
from .spiketransformer import (SpikingTransformer, load_checkpoint,
                               save_checkpoint)
from .supernet import (DivergenceError, clone_model, evaluate,
                       extract_architecture, finetune, run_search)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed,
                      search=replace(cfg.search, seed=args.seed))
    if getattr(args, "beta", None) is not None:
        cfg = replace(cfg, search=replace(cfg.search, beta=args.beta))
    return cfg


def _dataset_for(cfg: RunConfig):
    if cfg.data.path:
        return load_dataset(cfg.data.path)
    return generate_synthetic(
        classes=cfg.model.classes, n_per_class=cfg.data.samples_per_class,
        time_steps=cfg.model.time_steps, height=cfg.model.height,
        width=cfg.model.width, seed=cfg.seed, noise_rate=cfg.data.noise_rate)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_search(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args)
    dataset = _dataset_for(cfg)
    model = SpikingTransformer(cfg.model, seed=cfg.seed)
    try:
        result = run_search(model, dataset, cfg.search, table=cfg.energy)
    except DivergenceError as err:
        print(f"search diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    ext = extract_architecture(result.supernet)

    master = clone_model(result.supernet.model)
    if cfg.search.finetune_epochs > 0:
        eval_model = finetune(master, ext.choices, dataset,
                              epochs=cfg.search.finetune_epochs,
                              lr=cfg.train.lr, batch_size=cfg.train.batch_size,
                              seed=cfg.seed)
    else:
        eval_model = ext.model
    metrics = evaluate(eval_model, *dataset.subset("test"))

    write_trace_csv(out / "trace.csv", result.trace)
    write_json(out / "architecture.json",
               {name: choice.value for name, choice in sorted(ext.choices.items())})
    save_checkpoint(out / "checkpoint.bin", master, ext.choices)
    report = build_report(cfg.model, ext.choices, table=cfg.energy,
                          accuracy=metrics["accuracy"])
    write_json(out / "report.json", report)
    write_json(out / "metrics.json", metrics)
    cfg.save(out / "config.txt")
    print(format_report_table(report))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args)
    dataset = _dataset_for(cfg)
    if args.checkpoint:
        model, choices = load_checkpoint(args.checkpoint)
        if model.config != cfg.model:
            raise ValidationError(
                f"checkpoint model config {model.config} does not match the "
                f"run config")
    else:
        model = SpikingTransformer(cfg.model, seed=cfg.seed)
        choices = {h.name: QuantChoice.FP32 for h in model.handles}
    tuned = finetune(model, choices, dataset, epochs=cfg.train.epochs,
                     lr=cfg.train.lr, batch_size=cfg.train.batch_size,
                     seed=cfg.seed)
    metrics = evaluate(tuned, *dataset.subset("test"))
    save_checkpoint(out / "checkpoint.bin", model, choices)
    write_json(out / "metrics.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args)
    dataset = _dataset_for(cfg)
    model, choices = load_checkpoint(args.checkpoint)
    if model.config != cfg.model:
        raise ValidationError(
            "checkpoint model config does not match the run config")
    for name, choice in choices.items():
        model.params[name].data = np.ascontiguousarray(
            apply_quant_array(model.params[name].data, choice))
    metrics = evaluate(model, *dataset.subset("test"))
    write_json(out / "metrics.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_cost(args) -> int:
    cfg = _load_run_config(args)
    out = _out_dir(args)
    try:
        mapping = json.loads(Path(args.architecture).read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ValidationError(f"{args.architecture}: {err}")
    choices = architecture_choices(cfg.model, mapping)
    report = build_report(cfg.model, choices, table=cfg.energy,
                          assumptions=list(args.note or []))
    write_json(out / "report.json", report)
    print(format_report_table(report))
    return EXIT_OK


def cmd_report(args) -> int:
    out = _out_dir(args)
    trace_rows = read_trace_csv(args.trace)
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    emit_probability_evolution(trace_rows, out / "probabilities.csv")
    emit_component_breakdown(report, out / "components.csv")
    if args.checkpoint:
        model, choices = load_checkpoint(args.checkpoint)
        emit_weight_quantiles(model, choices, out / "weight_quantiles.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikequant",
        description="Heterogeneous quantization search for spiking transformers")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, beta=False):
        p.add_argument("--config", help="key=value run configuration file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the root seed")
        p.add_argument("--out", default="runs/last", help="output directory")
        if beta:
            p.add_argument("--beta", type=float, default=None,
                           help="override search.beta")

    p = sub.add_parser("search", help="run the quantization architecture search")
    common(p, beta=True)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("train", help="quantization-aware training")
    common(p)
    p.add_argument("--checkpoint", help="continue from this checkpoint")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="inference-only evaluation")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("cost", help="price an architecture without training")
    common(p)
    p.add_argument("--architecture", required=True,
                   help="JSON mapping layer names to choice names")
    p.add_argument("--note", action="append",
                   help="assumption recorded in the report (repeatable)")
    p.set_defaults(fn=cmd_cost)

    p = sub.add_parser("report", help="emit figure-ready CSV bundles")
    p.add_argument("--trace", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default="runs/last")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, ConfigurationError, FormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
