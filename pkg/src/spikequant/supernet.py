"""Bi-level differentiable search over per-layer quantization schemes.

Every searchable layer becomes a composite carrying one selection-logit
vector over the five candidates and a weight tensor quantized five ways on
the fly.  One optimization step alternates two phases:

* update_logits: a Gumbel-softmax sample is hardened to one-hot (straight
  through), so exactly one quantized realization is active per layer and the
  selection logits are updated under that choice;
* update_weights: the soft Gumbel-softmax mixes all realizations, so the
  shared weights receive gradient through every quantizer's
  straight-through estimator at once.

Because every searchable layer is linear in its weights, the candidate sum
is applied at the weight level (the realizations' weights are mixed, the
layer runs once); this is algebraically identical to summing the layer
outputs and is checked against the explicit sum in the tests.

The loss is ``L_acc * (L_hw / normalizer) ** beta`` where ``L_hw`` is the
selection-weighted hardware energy and the normalizer defaults to the
full-precision model energy; the Gumbel temperature anneals exponentially
per epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import diffcore as dc
from .costmodel import (EnergyTable, candidate_costs, expected_supernet_cost,
                        model_summary)
from .data import Dataset, iterate_batches
from .diffcore import AdamW, Tape, Tensor
from .errors import ValidationError
from .quantizers import CHOICES, QuantChoice, apply_quant, apply_quant_array
from .seeding import rng_stream
from .spiketransformer import (SpikingTransformer, batch_to_time_major,
                               forward_batch)

PHASES = ("update_weights", "update_logits")


class DivergenceError(RuntimeError):
    """Search loss became non-finite."""

    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class SearchConfig:
    beta: float = 1.0
    epochs: int = 40
    lambda_init: float = 5.0
    lambda_min: float = 0.1
    lambda_decay: float = 0.95
    weight_lr_init: float = 1e-4
    weight_lr_max: float = 1e-3
    weight_lr_min: float = 1e-5
    warmup_epochs: int = 5
    logit_lr: float = 1e-2
    weight_decay: float = 0.0
    batch_size: int = 16
    arch_split: float = 0.2
    seed: int = 1
    hw_normalizer: Optional[float] = None
    per_candidate_weights: bool = False
    finetune_epochs: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError(f"beta must be >= 0, got {self.beta}")
        if not self.lambda_init >= self.lambda_min > 0:
            raise ValidationError(
                f"need lambda_init >= lambda_min > 0, got "
                f"{self.lambda_init} and {self.lambda_min}")
        if not 0 < self.arch_split < 1:
            raise ValidationError(
                f"arch_split must be in (0, 1), got {self.arch_split}")


def lambda_schedule(cfg: SearchConfig, epoch: int) -> float:
    return max(cfg.lambda_min, cfg.lambda_init * cfg.lambda_decay ** epoch)


def weight_lr_schedule(cfg: SearchConfig, epoch: int) -> float:
    """Linear warmup to the peak rate, then cosine decay to the floor."""
    if epoch < cfg.warmup_epochs:
        frac = (epoch + 1) / cfg.warmup_epochs
        return cfg.weight_lr_init + frac * (cfg.weight_lr_max - cfg.weight_lr_init)
    span = max(1, cfg.epochs - cfg.warmup_epochs)
    t = min(1.0, (epoch - cfg.warmup_epochs) / span)
    return cfg.weight_lr_min + 0.5 * (cfg.weight_lr_max - cfg.weight_lr_min) \
        * (1.0 + np.cos(np.pi * t))


# ---------------------------------------------------------------------------
# selection weights
# ---------------------------------------------------------------------------

def gumbel_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    u = np.clip(rng.random(size), 1e-10, 1.0 - 1e-10)
    return -np.log(-np.log(u))


def gumbel_softmax(logits: Tensor, lam: float,
                   noise: Optional[np.ndarray] = None) -> Tensor:
    """softmax((logits + G) / lambda); zero noise gives a tempered softmax."""
    if lam <= 0:
        raise ValidationError(f"temperature must be positive, got {lam}")
    shifted = logits if noise is None else dc.add(logits, Tensor(noise))
    return dc.softmax_lastdim(dc.scale(shifted, 1.0 / lam))


def g_select(logits: Tensor, lam: float, phase: str,
             noise: Optional[np.ndarray] = None) -> Tensor:
    """Per-layer selection weights for one step of the given phase.

    update_weights returns the soft sample itself.  update_logits hardens
    the sample to one-hot at its argmax; the surviving coordinate keeps the
    soft sample's gradient (straight-through), the rest are constants.
    """
    if phase not in PHASES:
        raise ValidationError(f"unknown phase {phase!r}, expected one of {PHASES}")
    soft = gumbel_softmax(logits, lam, noise)
    if phase == "update_weights":
        return soft
    j = int(np.argmax(soft.data))
    parts = []
    for i in range(soft.shape[0]):
        if i == j:
            parts.append(dc.add(dc.select(soft, j), float(1.0 - soft.data[j])))
        else:
            parts.append(dc.zeros(()))
    return dc.stack(parts)


def total_loss(l_acc: Tensor, l_hw: Tensor, beta: float, normalizer: float) -> Tensor:
    """L_acc * (L_hw / normalizer) ** beta; beta = 0 is pure accuracy training."""
    if float(l_acc.data) <= 0 or float(l_hw.data) <= 0:
        raise ValidationError(
            f"loss factors must be positive, got L_acc={float(l_acc.data)} "
            f"L_hw={float(l_hw.data)}")
    if normalizer <= 0:
        raise ValidationError(f"normalizer must be positive, got {normalizer}")
    return dc.mul(l_acc, dc.powc(dc.scale(l_hw, 1.0 / normalizer), float(beta)))


# ---------------------------------------------------------------------------
# composite layers and the supernet
# ---------------------------------------------------------------------------

@dataclass
class CompositeLayer:
    """A searchable layer: base handle, selection logits, candidate weights."""

    handle: object
    logits: Tensor
    weights: list  # one tensor per candidate (all the same object when shared)
    costs: list    # energy per candidate, canonical order

    @property
    def name(self) -> str:
        return self.handle.name

    def selection_probabilities(self) -> np.ndarray:
        e = np.exp(self.logits.data - np.max(self.logits.data))
        return e / e.sum()

    def mixed_weight(self, g: Tensor, phase: str) -> Tensor:
        """Weight-level candidate sum ``sum_i g_i * quant_i(theta_i)``.

        In the one-hot phase only the sampled candidate is quantized; the
        remaining coordinates of ``g`` are exact zeros.
        """
        if phase == "update_logits":
            j = int(np.argmax(g.data))
            return dc.mul(apply_quant(self.weights[j], CHOICES[j]), dc.select(g, j))
        mixed = None
        for i, choice in enumerate(CHOICES):
            term = dc.mul(apply_quant(self.weights[i], choice), dc.select(g, i))
            mixed = term if mixed is None else dc.add(mixed, term)
        return mixed


@dataclass
class TraceRow:
    epoch: int
    block: str
    layer: str
    choice_name: str
    probability: float
    lam: float
    l_acc: float
    l_hw: float
    l_total: float


class Supernet:
    """The searchable model: one composite per quantizable layer."""

    def __init__(self, model: SpikingTransformer, cfg: SearchConfig,
                 table: Optional[EnergyTable] = None):
        self.model = model
        self.cfg = cfg
        self.table = table or EnergyTable()
        self.composites: list[CompositeLayer] = []
        for h in model.handles:
            if cfg.per_candidate_weights:
                weights = [h.weight] + [
                    Tensor(h.weight.data.copy(), requires_grad=True)
                    for _ in CHOICES[1:]]
            else:
                weights = [h.weight] * len(CHOICES)
            self.composites.append(CompositeLayer(
                handle=h,
                logits=Tensor(np.zeros(len(CHOICES)), requires_grad=True),
                weights=weights,
                costs=candidate_costs(h.spec, self.table)))
        fp32 = [QuantChoice.FP32] * len(model.handles)
        self.fp32_energy_pj = model_summary(
            [h.spec for h in model.handles], fp32, self.table)["total_energy_pj"]
        self.normalizer = cfg.hw_normalizer or self.fp32_energy_pj

    def weight_params(self) -> list[Tensor]:
        params = list(self.model.params.values())
        if self.cfg.per_candidate_weights:
            for comp in self.composites:
                params.extend(comp.weights[1:])
        return params

    def logit_params(self) -> list[Tensor]:
        return [comp.logits for comp in self.composites]

    def forward(self, frames: Tensor, phase: str, lam: float,
                rng: np.random.Generator) -> tuple[Tensor, list[Tensor]]:
        """One supernet forward; returns logits and per-layer selections."""
        weight_map = {}
        selections = []
        for comp in self.composites:
            noise = gumbel_noise(rng, len(CHOICES))
            g = g_select(comp.logits, lam, phase, noise)
            selections.append(g)
            weight_map[comp.name] = comp.mixed_weight(g, phase)
        out = forward_batch(self.model, frames, weight_map)
        return out, selections

    def losses(self, logits_out: Tensor, labels, selections) -> tuple:
        l_acc = dc.softmax_cross_entropy(logits_out, labels)
        l_hw = expected_supernet_cost([c.costs for c in self.composites],
                                      selections)
        l_total = total_loss(l_acc, l_hw, self.cfg.beta, self.normalizer)
        return l_acc, l_hw, l_total


# ---------------------------------------------------------------------------
# the search loop
# ---------------------------------------------------------------------------

def _zero_grads(*groups):
    for params in groups:
        for p in params:
            p.grad = None


def search_step(supernet: Supernet, batch_w, batch_a, weight_opt: AdamW,
                logit_opt: AdamW, lam: float, rng: np.random.Generator) -> dict:
    """One alternating update: logits on the held-out batch, then weights."""
    frames_a, labels_a = batch_a
    frames_w, labels_w = batch_w

    _zero_grads(supernet.weight_params(), supernet.logit_params())
    with Tape() as tape:
        out, sel = supernet.forward(Tensor(frames_a), "update_logits", lam, rng)
        l_acc_a, l_hw_a, l_total_a = supernet.losses(out, labels_a, sel)
    tape.backward(l_total_a)
    logit_opt.step()

    _zero_grads(supernet.weight_params(), supernet.logit_params())
    with Tape() as tape:
        out, sel = supernet.forward(Tensor(frames_w), "update_weights", lam, rng)
        l_acc_w, l_hw_w, l_total_w = supernet.losses(out, labels_w, sel)
    tape.backward(l_total_w)
    weight_opt.step()

    return {
        "l_acc": float(l_acc_w.data), "l_hw": float(l_hw_w.data),
        "l_total": float(l_total_w.data),
        "l_total_arch": float(l_total_a.data),
    }


@dataclass
class SearchResult:
    supernet: Supernet
    trace: list = field(default_factory=list)


def run_search(model: SpikingTransformer, dataset: Dataset, cfg: SearchConfig,
               table: Optional[EnergyTable] = None) -> SearchResult:
    """Train the supernet with alternating logit/weight updates.

    The training split is carved into an architecture slice (``arch_split``
    of it, used by the logit phase) and a weight slice; the Gumbel
    temperature and the weight learning rate follow their per-epoch
    schedules.  Trace rows record each layer's selection probabilities at
    the start of every epoch plus that epoch's mean losses.
    """
    supernet = Supernet(model, cfg, table)
    weight_opt = AdamW(supernet.weight_params(), lr=cfg.weight_lr_init,
                       weight_decay=cfg.weight_decay)
    logit_opt = AdamW(supernet.logit_params(), lr=cfg.logit_lr)

    split_rng = rng_stream(cfg.seed, "split")
    gumbel_rng = rng_stream(cfg.seed, "gumbel")
    batch_rng = rng_stream(cfg.seed, "batches")

    frames, labels = dataset.subset("train")
    order = split_rng.permutation(len(labels))
    n_arch = max(1, int(round(cfg.arch_split * len(labels))))
    arch_idx, weight_idx = order[:n_arch], order[n_arch:]
    arch_frames, arch_labels = frames[arch_idx], labels[arch_idx]
    w_frames, w_labels = frames[weight_idx], labels[weight_idx]

    result = SearchResult(supernet=supernet)
    for epoch in range(cfg.epochs):
        lam = lambda_schedule(cfg, epoch)
        weight_opt.lr = weight_lr_schedule(cfg, epoch)
        epoch_rows_start = len(result.trace)
        for comp in supernet.composites:
            probs = comp.selection_probabilities()
            block = comp.name.split(".")[0]
            for choice, p in zip(CHOICES, probs):
                result.trace.append(TraceRow(
                    epoch=epoch, block=block, layer=comp.name,
                    choice_name=choice.value, probability=float(p), lam=lam,
                    l_acc=0.0, l_hw=0.0, l_total=0.0))

        arch_batches = list(iterate_batches(arch_frames, arch_labels,
                                            cfg.batch_size, batch_rng))
        stats = {"l_acc": 0.0, "l_hw": 0.0, "l_total": 0.0}
        n_steps = 0
        for bi, (bf, bl) in enumerate(iterate_batches(
                w_frames, w_labels, cfg.batch_size, batch_rng)):
            ba = arch_batches[bi % len(arch_batches)]
            rec = search_step(
                supernet,
                (batch_to_time_major(bf), bl),
                (batch_to_time_major(ba[0]), ba[1]),
                weight_opt, logit_opt, lam, gumbel_rng)
            if not np.isfinite(rec["l_total"]) or not np.isfinite(rec["l_total_arch"]):
                raise DivergenceError(epoch, rec["l_total"])
            for k in stats:
                stats[k] += rec[k]
            n_steps += 1
        for row in result.trace[epoch_rows_start:]:
            row.l_acc = stats["l_acc"] / n_steps
            row.l_hw = stats["l_hw"] / n_steps
            row.l_total = stats["l_total"] / n_steps
    return result


# ---------------------------------------------------------------------------
# extraction and fine-tuning
# ---------------------------------------------------------------------------

def clone_model(model: SpikingTransformer) -> SpikingTransformer:
    out = SpikingTransformer(model.config, seed=0)
    for name, p in model.params.items():
        out.params[name].data = p.data.copy()
    return out


@dataclass
class ExtractedArchitecture:
    model: SpikingTransformer
    choices: dict
    summary: dict
    selection: dict  # layer name -> one-hot vector over CHOICES


def extract_architecture(supernet: Supernet) -> ExtractedArchitecture:
    """Pick argmax choices, requantize once with frozen calibration.

    Logit ties break toward the lowest-energy candidate.
    """
    model = clone_model(supernet.model)
    choices: dict[str, QuantChoice] = {}
    selection: dict[str, np.ndarray] = {}
    for comp in supernet.composites:
        logits = comp.logits.data
        top = np.flatnonzero(logits == logits.max())
        j = int(min(top, key=lambda i: comp.costs[i]))
        choice = CHOICES[j]
        choices[comp.name] = choice
        onehot = np.zeros(len(CHOICES))
        onehot[j] = 1.0
        selection[comp.name] = onehot
        model.params[comp.name].data = np.ascontiguousarray(
            apply_quant_array(comp.weights[j].data, choice))
    summary = model_summary([h.spec for h in model.handles],
                            [choices[h.name] for h in model.handles],
                            supernet.table)
    return ExtractedArchitecture(model=model, choices=choices, summary=summary,
                                 selection=selection)


def finetune(model: SpikingTransformer, choices: dict, dataset: Dataset,
             epochs: int, lr: float = 1e-3, batch_size: int = 16,
             seed: int = 1) -> SpikingTransformer:
    """Fixed-choice quantization-aware fine-tuning.

    Master weights stay full precision and are requantized every forward
    (dynamic calibration); the returned model carries the final on-grid
    weights.  Zero epochs return the model unchanged.
    """
    if epochs == 0:
        return model
    rng = rng_stream(seed, "finetune")
    opt = AdamW(model.trainable(), lr=lr)
    frames, labels = dataset.subset("train")
    for _ in range(epochs):
        for bf, bl in iterate_batches(frames, labels, batch_size, rng):
            opt.zero_grad()
            with Tape() as tape:
                weight_map = {
                    name: apply_quant(model.params[name], choice)
                    for name, choice in choices.items()}
                out = forward_batch(model, Tensor(batch_to_time_major(bf)),
                                    weight_map)
                loss = dc.softmax_cross_entropy(out, bl)
            tape.backward(loss)
            opt.step()
    final = clone_model(model)
    for name, choice in choices.items():
        final.params[name].data = np.ascontiguousarray(
            apply_quant_array(model.params[name].data, choice))
    return final


def evaluate(model: SpikingTransformer, frames: np.ndarray, labels: np.ndarray,
             batch_size: int = 32) -> dict:
    """Inference-only accuracy and mean cross-entropy."""
    correct = 0
    loss_sum = 0.0
    n = len(labels)
    for bf, bl in iterate_batches(frames, labels, batch_size):
        out = forward_batch(model, Tensor(batch_to_time_major(bf)))
        loss = dc.softmax_cross_entropy(out, bl)
        loss_sum += float(loss.data) * len(bl)
        correct += int(np.sum(np.argmax(out.data, axis=1) == bl))
    return {"accuracy": correct / n, "loss": loss_sum / n, "n_samples": n}
