"""Run configuration: UTF-8 line-oriented ``section.key=value`` files.

Sections: ``model.*`` (architecture), ``search.*`` (NAS schedule), ``train.*``
(plain/QAT training), ``data.*`` (synthetic generator or dataset path), and
``energy.*`` (cost-table overrides), plus the root ``seed``.  Unknown keys
and malformed lines are rejected with the offending line number.  A config
emitted by :meth:`RunConfig.to_text` re-parses to an equal value.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .costmodel import EnergyRow, EnergyTable
from .errors import ConfigurationError, ValidationError
from .spiketransformer import LIFConfig, ModelConfig
from .supernet import SearchConfig


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 16


@dataclass(frozen=True)
class DataConfig:
    samples_per_class: int = 40
    noise_rate: float = 0.02
    path: str = ""  # optional on-disk dataset directory; empty = synthesize


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    energy: EnergyTable = field(default_factory=EnergyTable)
    seed: int = 1

    def to_text(self) -> str:
        lines = [f"seed={self.seed}"]
        for key, value in self.model.to_kv().items():
            lines.append(f"model.{key}={value}")
        s = self.search
        for key, value in [
                ("beta", repr(s.beta)), ("epochs", s.epochs),
                ("lambda_init", repr(s.lambda_init)),
                ("lambda_min", repr(s.lambda_min)),
                ("lambda_decay", repr(s.lambda_decay)),
                ("weight_lr_init", repr(s.weight_lr_init)),
                ("weight_lr_max", repr(s.weight_lr_max)),
                ("weight_lr_min", repr(s.weight_lr_min)),
                ("warmup_epochs", s.warmup_epochs),
                ("logit_lr", repr(s.logit_lr)),
                ("weight_decay", repr(s.weight_decay)),
                ("batch_size", s.batch_size),
                ("arch_split", repr(s.arch_split)),
                ("finetune_epochs", s.finetune_epochs),
                ("per_candidate_weights", int(s.per_candidate_weights))]:
            lines.append(f"search.{key}={value}")
        lines.append(f"train.epochs={self.train.epochs}")
        lines.append(f"train.lr={self.train.lr!r}")
        lines.append(f"train.batch_size={self.train.batch_size}")
        d = self.data
        lines.append(f"data.samples_per_class={d.samples_per_class}")
        lines.append(f"data.noise_rate={d.noise_rate!r}")
        lines.append(f"data.path={d.path}")
        for fmt in ("fp32", "int8"):
            row = getattr(self.energy, fmt)
            for op in ("mult", "add", "shift", "dram"):
                lines.append(f"energy.{fmt}_{op}={getattr(row, op)!r}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


_MODEL_KEYS = set(ModelConfig().to_kv())
_SEARCH_KEYS = {
    "beta": float, "epochs": int, "lambda_init": float, "lambda_min": float,
    "lambda_decay": float, "weight_lr_init": float, "weight_lr_max": float,
    "weight_lr_min": float, "warmup_epochs": int, "logit_lr": float,
    "weight_decay": float, "batch_size": int, "arch_split": float,
    "finetune_epochs": int, "per_candidate_weights": lambda v: bool(int(v)),
}
_TRAIN_KEYS = {"epochs": int, "lr": float, "batch_size": int}
_DATA_KEYS = {"samples_per_class": int, "noise_rate": float, "path": str}
_ENERGY_KEYS = {f"{fmt}_{op}" for fmt in ("fp32", "int8")
                for op in ("mult", "add", "shift", "dram")}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    sections: dict[str, dict[str, str]] = {
        "model": {}, "search": {}, "train": {}, "data": {}, "energy": {}}
    root: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(
                f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if "." in key:
            section, _, sub = key.partition(".")
            if section not in sections:
                raise ValidationError(
                    f"{source}:{lineno}: unknown section {section!r}")
            sections[section][sub] = value
        elif key == "seed":
            root["seed"] = value
        else:
            raise ValidationError(f"{source}:{lineno}: unknown key {key!r}")

    def typed(section: str, table: dict, values: dict) -> dict:
        out = {}
        for sub, value in values.items():
            if sub not in table:
                raise ValidationError(
                    f"{source}: unknown field {section}.{sub}")
            try:
                out[sub] = table[sub](value) if callable(table[sub]) else value
            except ValueError as err:
                raise ValidationError(
                    f"{source}: bad value for {section}.{sub}: {err}")
        return out

    try:
        model_kv = ModelConfig().to_kv()
        for sub, value in sections["model"].items():
            if sub not in _MODEL_KEYS:
                raise ValidationError(f"{source}: unknown field model.{sub}")
            model_kv[sub] = value
        model = ModelConfig.from_kv(model_kv)
        search = SearchConfig(**typed("search", _SEARCH_KEYS, sections["search"]))
        train = TrainConfig(**typed("train", _TRAIN_KEYS, sections["train"]))
        data = DataConfig(**typed("data", _DATA_KEYS, sections["data"]))
        energy_vals = {f"{fmt}_{op}": getattr(getattr(EnergyTable(), fmt), op)
                       for fmt in ("fp32", "int8")
                       for op in ("mult", "add", "shift", "dram")}
        for sub, value in sections["energy"].items():
            if sub not in _ENERGY_KEYS:
                raise ValidationError(f"{source}: unknown field energy.{sub}")
            try:
                energy_vals[sub] = float(value)
            except ValueError as err:
                raise ValidationError(
                    f"{source}: bad value for energy.{sub}: {err}")
        energy = EnergyTable(
            fp32=EnergyRow(*(energy_vals[f"fp32_{op}"]
                             for op in ("mult", "add", "shift", "dram"))),
            int8=EnergyRow(*(energy_vals[f"int8_{op}"]
                             for op in ("mult", "add", "shift", "dram"))))
        seed = int(root.get("seed", "1"))
    except (ValueError, ConfigurationError) as err:
        raise ValidationError(f"{source}: {err}")
    # one root seed drives everything; the search copy follows it
    search = replace(search, seed=seed)
    return RunConfig(model=model, search=search, train=train, data=data,
                     energy=energy, seed=seed)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: config file not found")
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))
