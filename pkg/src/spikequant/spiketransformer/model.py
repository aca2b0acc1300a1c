"""Desk-scale spiking transformer.

Spiking tokenizer (4 convolution stages), softmax-free spiking self-attention,
MLP blocks with residual connections, LIF neurons with rectangular surrogate
gradients, and a global average-pool classification head, unrolled over
discrete time steps.  Every conv/linear weight is exposed as a
:class:`LayerHandle` so the cost model and the quantization search can
address layers uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import diffcore as dc
from ..costmodel import LayerSpec
from ..diffcore import Tensor
from ..errors import ConfigurationError, DimensionError

Array = np.ndarray


@dataclass(frozen=True)
class LIFConfig:
    """Leaky integrate-and-fire dynamics: multiplicative leak, hard reset."""

    threshold: float = 1.0
    decay: float = 0.5
    surrogate_width: float = 1.0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ConfigurationError(f"threshold must be positive, got {self.threshold}")
        if not 0 < self.decay <= 1:
            raise ConfigurationError(f"decay must be in (0, 1], got {self.decay}")
        if not self.surrogate_width > 0:
            raise ConfigurationError("surrogate width must be positive")


@dataclass(frozen=True)
class ModelConfig:
    time_steps: int = 4
    blocks: int = 2
    embed_dim: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    tokenizer_channels: tuple = (2, 8, 16, 32, 64)
    tokenizer_strides: tuple = (1, 2, 1, 2)
    height: int = 32
    width: int = 32
    classes: int = 4
    attn_scale: float = 0.125
    lif: LIFConfig = field(default_factory=LIFConfig)

    def __post_init__(self):
        object.__setattr__(self, "tokenizer_channels",
                           tuple(int(c) for c in self.tokenizer_channels))
        object.__setattr__(self, "tokenizer_strides",
                           tuple(int(s) for s in self.tokenizer_strides))
        if self.embed_dim % self.heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")
        if len(self.tokenizer_channels) != 5:
            raise ConfigurationError(
                "tokenizer needs a 5-entry channel schedule (input + 4 stages), "
                f"got {self.tokenizer_channels}")
        if len(self.tokenizer_strides) != 4:
            raise ConfigurationError(
                f"tokenizer needs 4 stage strides, got {self.tokenizer_strides}")
        if self.tokenizer_channels[-1] != self.embed_dim:
            raise ConfigurationError(
                f"last tokenizer channel {self.tokenizer_channels[-1]} must equal "
                f"embed_dim {self.embed_dim}")
        down = self.downsample
        if self.height % down or self.width % down:
            raise ConfigurationError(
                f"input {self.height}x{self.width} not divisible by the "
                f"tokenizer downsample factor {down}")

    @property
    def downsample(self) -> int:
        d = 1
        for s in self.tokenizer_strides:
            d *= s
        return d

    @property
    def feature_hw(self) -> tuple[int, int]:
        return self.height // self.downsample, self.width // self.downsample

    @property
    def tokens(self) -> int:
        fh, fw = self.feature_hw
        return fh * fw

    def to_kv(self) -> dict:
        return {
            "time_steps": str(self.time_steps),
            "blocks": str(self.blocks),
            "embed_dim": str(self.embed_dim),
            "heads": str(self.heads),
            "mlp_ratio": str(self.mlp_ratio),
            "tokenizer_channels": ",".join(map(str, self.tokenizer_channels)),
            "tokenizer_strides": ",".join(map(str, self.tokenizer_strides)),
            "height": str(self.height),
            "width": str(self.width),
            "classes": str(self.classes),
            "attn_scale": repr(self.attn_scale),
            "lif_threshold": repr(self.lif.threshold),
            "lif_decay": repr(self.lif.decay),
            "surrogate_width": repr(self.lif.surrogate_width),
        }

    @classmethod
    def from_kv(cls, kv: dict) -> "ModelConfig":
        return cls(
            time_steps=int(kv["time_steps"]),
            blocks=int(kv["blocks"]),
            embed_dim=int(kv["embed_dim"]),
            heads=int(kv["heads"]),
            mlp_ratio=int(kv["mlp_ratio"]),
            tokenizer_channels=tuple(int(c) for c in kv["tokenizer_channels"].split(",")),
            tokenizer_strides=tuple(int(s) for s in kv["tokenizer_strides"].split(",")),
            height=int(kv["height"]),
            width=int(kv["width"]),
            classes=int(kv["classes"]),
            attn_scale=float(kv["attn_scale"]),
            lif=LIFConfig(threshold=float(kv["lif_threshold"]),
                          decay=float(kv["lif_decay"]),
                          surrogate_width=float(kv["surrogate_width"])),
        )


@dataclass
class LayerHandle:
    """One quantizable conv/linear layer: its tag, cost spec, and weight."""

    name: str
    tag: str
    spec: LayerSpec
    weight: Tensor

    @property
    def param_count(self) -> int:
        return self.weight.size


def enumerate_layer_specs(config: ModelConfig) -> list[tuple[str, str, LayerSpec]]:
    """(name, tag, cost spec) for every quantizable layer, in model order.

    This is the single source of the layer map; building a model attaches a
    weight tensor to each entry.
    """
    out: list[tuple[str, str, LayerSpec]] = []
    d_lin = config.time_steps * config.tokens
    h, w = config.height, config.width
    chans = config.tokenizer_channels
    for i in range(4):
        out.append((f"tokenizer.conv{i + 1}", "tokenizer",
                    LayerSpec.conv(3, chans[i], chans[i + 1], h * w,
                                   component="tokenizer")))
        h //= config.tokenizer_strides[i]
        w //= config.tokenizer_strides[i]
    D, rD = config.embed_dim, config.embed_dim * config.mlp_ratio
    for b in range(1, config.blocks + 1):
        for role in ("query", "key", "value", "output"):
            out.append((f"block{b}.attention.{role}", f"attention.{role}",
                        LayerSpec.linear(D, D, d_lin,
                                         component=f"attention.{role}")))
        out.append((f"block{b}.mlp.fc1", "mlp",
                    LayerSpec.linear(D, rD, d_lin, component="mlp")))
        out.append((f"block{b}.mlp.fc2", "mlp",
                    LayerSpec.linear(rD, D, d_lin, component="mlp")))
    out.append(("head", "head",
                LayerSpec.linear(D, config.classes, d_lin, component="head")))
    return out


# ---------------------------------------------------------------------------
# LIF dynamics
# ---------------------------------------------------------------------------

def _spike_op(cfg: LIFConfig):
    th, w = cfg.threshold, cfg.surrogate_width

    def forward(v: Array) -> Array:
        return (v >= th).astype(np.float64)

    def mask(v: Array) -> Array:
        return (np.abs(v - th) <= w / 2).astype(np.float64) / w

    return dc.custom_grad(forward, mask, name="spike")


def lif_step(state: Tensor, current: Tensor, cfg: LIFConfig) -> tuple[Tensor, Tensor]:
    """One membrane update: leak, integrate, fire, hard reset.

    v' = decay * v + I; spikes where v' crosses the threshold; the membrane
    is zeroed where a spike fired.  The Heaviside backward is a rectangular
    surrogate of width ``surrogate_width`` around the threshold.
    """
    if state.shape != current.shape:
        raise DimensionError(
            f"lif_step: state {state.shape} vs input current {current.shape}")
    v = dc.add(dc.scale(state, cfg.decay), current)
    spikes = _spike_op(cfg)(v)
    new_state = dc.mul(v, dc.add(dc.scale(spikes, -1.0), 1.0))
    return spikes, new_state


def lif_sequence(currents: Tensor, cfg: LIFConfig) -> Tensor:
    """Run a fresh LIF population over the leading time axis."""
    T = currents.shape[0]
    state = dc.zeros(currents.shape[1:])
    outs = []
    for t in range(T):
        spikes, state = lif_step(state, dc.select(currents, t), cfg)
        outs.append(spikes)
    return dc.stack(outs)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class SpikingTransformer:
    """Parameter container plus the forward graph builder.

    ``params`` maps names to tensors (all trainable); ``handles`` lists the
    quantizable conv/linear weights in deterministic order: tokenizer convs,
    then per block {query, key, value, output, mlp...}, then the head.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.handles: list[LayerHandle] = []
        self._build(np.random.default_rng(np.random.SeedSequence(seed)))

    # -- construction -------------------------------------------------------

    def _param(self, name: str, values: Array) -> Tensor:
        t = Tensor(values, requires_grad=True)
        self.params[name] = t
        return t

    def _init_weight(self, rng, shape, fan_in: int) -> Array:
        bound = np.sqrt(1.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    def _affine(self, name: str, channels: int) -> None:
        self._param(f"{name}.gamma", np.ones(channels))
        self._param(f"{name}.beta", np.zeros(channels))

    def _handle(self, name: str, tag: str, spec: LayerSpec, weight: Tensor) -> None:
        self.handles.append(LayerHandle(name=name, tag=tag, spec=spec, weight=weight))

    def _build(self, rng) -> None:
        cfg = self.config
        for name, tag, spec in enumerate_layer_specs(cfg):
            if spec.kind == "conv":
                shape = (spec.c_out, spec.c_in, spec.k, spec.k)
                fan_in = spec.c_in * spec.k * spec.k
            else:
                shape = (spec.f_in, spec.f_out)
                fan_in = spec.f_in
            weight = self._param(name, self._init_weight(rng, shape, fan_in))
            self._handle(name, tag, spec, weight)

        for i in range(4):
            self._affine(f"tokenizer.affine{i + 1}", cfg.tokenizer_channels[i + 1])
        fh, fw = cfg.feature_hw
        self._param("tokenizer.pos_embed", np.zeros((cfg.embed_dim, fh, fw)))
        D, rD = cfg.embed_dim, cfg.embed_dim * cfg.mlp_ratio
        for b in range(1, cfg.blocks + 1):
            for role in ("query", "key", "value", "output"):
                self._affine(f"block{b}.attention.{role}_affine", D)
            self._affine(f"block{b}.mlp.affine1", rD)
            self._affine(f"block{b}.mlp.affine2", D)
        self._param("head.bias", np.zeros(cfg.classes))

    # -- lookup --------------------------------------------------------------

    def weight_for(self, name: str, weight_map: dict | None) -> Tensor:
        if weight_map is not None and name in weight_map:
            return weight_map[name]
        return self.params[name]

    def handle_names(self) -> list[str]:
        return [h.name for h in self.handles]

    def trainable(self) -> list[Tensor]:
        return list(self.params.values())


def enumerate_layers(model: SpikingTransformer) -> list[LayerHandle]:
    """Quantizable layers in deterministic order (convs, blocks, head)."""
    return list(model.handles)


# ---------------------------------------------------------------------------
# forward graph
# ---------------------------------------------------------------------------

def _affine_over_channels(model, x: Tensor, name: str, axis: int) -> Tensor:
    return dc.channel_affine(x, model.params[f"{name}.gamma"],
                             model.params[f"{name}.beta"], axis=axis)


def _linear_lastdim(x: Tensor, weight: Tensor) -> Tensor:
    lead = x.shape[:-1]
    flat = dc.reshape(x, (int(np.prod(lead)), x.shape[-1]))
    out = dc.matmul(flat, weight)
    return dc.reshape(out, lead + (weight.shape[1],))


def tokenizer_forward(model: SpikingTransformer, frames,
                      weight_map: dict | None = None) -> Tensor:
    """Event frames -> spike patches [T, B, tokens, D] (batch axis optional)."""
    cfg = model.config
    single = False
    x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=np.float64))
    if x.ndim == 4:
        single = True
        x = dc.reshape(x, (x.shape[0], 1) + x.shape[1:])
    if x.ndim != 5:
        raise DimensionError(f"tokenizer expects [T, B, C, H, W], got {x.shape}")
    T, B = x.shape[0], x.shape[1]
    for i in range(4):
        w = model.weight_for(f"tokenizer.conv{i + 1}", weight_map)
        folded = dc.reshape(x, (T * B,) + x.shape[2:])
        conv = dc.conv2d(folded, w, stride=cfg.tokenizer_strides[i], padding=1)
        conv = _affine_over_channels(model, conv, f"tokenizer.affine{i + 1}", axis=1)
        currents = dc.reshape(conv, (T, B) + conv.shape[1:])
        x = lif_sequence(currents, cfg.lif)
    # position embedding enters as input current to a final LIF stage so the
    # output stays spike-form
    pos = model.params["tokenizer.pos_embed"]
    x = lif_sequence(dc.add_trailing(x, pos), cfg.lif)
    fh, fw = cfg.feature_hw
    x = dc.transpose(x, (0, 1, 3, 4, 2))  # [T, B, fh, fw, D]
    x = dc.reshape(x, (T, B, fh * fw, cfg.embed_dim))
    if single:
        x = dc.reshape(x, (T, fh * fw, cfg.embed_dim))
    return x


def _split_heads(x: Tensor, heads: int) -> Tensor:
    T, B, tok, D = x.shape
    x = dc.reshape(x, (T, B, tok, heads, D // heads))
    return dc.transpose(x, (0, 1, 3, 2, 4))  # [T, B, h, tok, dh]


def _merge_heads(x: Tensor) -> Tensor:
    T, B, h, tok, dh = x.shape
    x = dc.transpose(x, (0, 1, 3, 2, 4))
    return dc.reshape(x, (T, B, tok, h * dh))


def ssa_forward(model: SpikingTransformer, x: Tensor, block: int,
                weight_map: dict | None = None) -> Tensor:
    """Spiking self-attention without softmax, residual around the block."""
    cfg = model.config
    single = x.ndim == 3
    if single:
        x = dc.reshape(x, (x.shape[0], 1) + x.shape[1:])
    prefix = f"block{block}.attention"
    qkv = {}
    for role in ("query", "key", "value"):
        cur = _linear_lastdim(x, model.weight_for(f"{prefix}.{role}", weight_map))
        cur = _affine_over_channels(model, cur, f"{prefix}.{role}_affine", axis=3)
        qkv[role] = _split_heads(lif_sequence(cur, cfg.lif), cfg.heads)
    attn = dc.matmul(qkv["query"], dc.transpose(qkv["key"], (0, 1, 2, 4, 3)))
    attended = dc.scale(dc.matmul(attn, qkv["value"]), cfg.attn_scale)
    merged = _merge_heads(attended)
    out = _linear_lastdim(merged, model.weight_for(f"{prefix}.output", weight_map))
    out = _affine_over_channels(model, out, f"{prefix}.output_affine", axis=3)
    out = dc.add(x, lif_sequence(out, cfg.lif))
    if single:
        out = dc.reshape(out, out.shape[0:1] + out.shape[2:])
    return out


def mlp_forward(model: SpikingTransformer, x: Tensor, block: int,
                weight_map: dict | None = None) -> Tensor:
    """Two spiking linear stages with a residual connection."""
    cfg = model.config
    single = x.ndim == 3
    if single:
        x = dc.reshape(x, (x.shape[0], 1) + x.shape[1:])
    prefix = f"block{block}.mlp"
    h = _linear_lastdim(x, model.weight_for(f"{prefix}.fc1", weight_map))
    h = _affine_over_channels(model, h, f"{prefix}.affine1", axis=3)
    h = lif_sequence(h, cfg.lif)
    y = _linear_lastdim(h, model.weight_for(f"{prefix}.fc2", weight_map))
    y = _affine_over_channels(model, y, f"{prefix}.affine2", axis=3)
    out = dc.add(x, lif_sequence(y, cfg.lif))
    if single:
        out = dc.reshape(out, out.shape[0:1] + out.shape[2:])
    return out


def forward_batch(model: SpikingTransformer, frames,
                  weight_map: dict | None = None) -> Tensor:
    """Full forward over a [T, B, C, H, W] batch; returns [B, K] logits."""
    x = tokenizer_forward(model, frames, weight_map)
    for b in range(1, model.config.blocks + 1):
        x = ssa_forward(model, x, b, weight_map)
        x = mlp_forward(model, x, b, weight_map)
    pooled = dc.mean(x, axes=(0, 2))  # average over time and tokens
    logits = dc.matmul(pooled, model.weight_for("head", weight_map))
    return dc.add_trailing(logits, model.params["head.bias"])


def model_forward(model: SpikingTransformer, frames,
                  weight_map: dict | None = None) -> Tensor:
    """Single-sample forward: [T, C, H, W] frames -> [K] logits."""
    arr = frames.data if isinstance(frames, Tensor) else np.asarray(frames, dtype=np.float64)
    if arr.ndim != 4:
        raise DimensionError(f"model_forward expects [T, C, H, W], got {arr.shape}")
    batched = Tensor(arr[:, None])
    logits = forward_batch(model, batched, weight_map)
    return dc.reshape(logits, (model.config.classes,))


def batch_to_time_major(frames: Array) -> Array:
    """Dataset batches are [N, T, C, H, W]; the model wants [T, N, C, H, W]."""
    return np.ascontiguousarray(np.transpose(frames, (1, 0, 2, 3, 4)))
