"""Binary model checkpoints.

Layout (little-endian): magic ``SQCK``, u16 version, a UTF-8 key=value
model-config block (u32 length prefix), the quantizable handles (name,
quantization choice, weight tensor), then the remaining parameters.  Weight
payloads are 32-bit IEEE-754 with u16 rank / u32 dim shape prefixes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..quantizers import QuantChoice
from .model import ModelConfig, SpikingTransformer

MAGIC = b"SQCK"
VERSION = 1


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def _pack_tensor(values: np.ndarray) -> bytes:
    values = np.asarray(values)
    head = struct.pack("<H", values.ndim)
    head += struct.pack(f"<{values.ndim}I", *values.shape)
    return head + values.astype("<f4").tobytes(order="C")


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise FormatError(
                f"{self.path}: truncated at byte {len(self.raw)}, "
                f"needed {self.off + n}")
        out = self.raw[self.off:self.off + n]
        self.off += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u16()).decode("utf-8")

    def tensor(self) -> np.ndarray:
        rank = self.u16()
        dims = struct.unpack(f"<{rank}I", self.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        payload = self.take(4 * count)
        return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)


def save_checkpoint(path, model: SpikingTransformer,
                    choices: dict[str, QuantChoice]) -> None:
    handle_names = set(model.handle_names())
    out = [MAGIC, struct.pack("<H", VERSION)]
    cfg_block = "\n".join(f"{k}={v}" for k, v in model.config.to_kv().items())
    cfg_bytes = cfg_block.encode("utf-8")
    out.append(struct.pack("<I", len(cfg_bytes)))
    out.append(cfg_bytes)
    out.append(struct.pack("<I", len(model.handles)))
    for h in model.handles:
        out.append(_pack_str(h.name))
        out.append(_pack_str(choices[h.name].value))
        out.append(_pack_tensor(h.weight.data))
    aux = [(name, t) for name, t in model.params.items() if name not in handle_names]
    out.append(struct.pack("<I", len(aux)))
    for name, t in aux:
        out.append(_pack_str(name))
        out.append(_pack_tensor(t.data))
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path) -> tuple[SpikingTransformer, dict[str, QuantChoice]]:
    """Rebuild the model and per-layer choices stored by ``save_checkpoint``.

    Stored values are float32; they are widened back to the internal float64
    representation on load.
    """
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic {r.raw[:4]!r} at byte 0")
    version = r.u16()
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    cfg_len = r.u32()
    kv = {}
    for line in r.take(cfg_len).decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        kv[key] = value
    config = ModelConfig.from_kv(kv)
    model = SpikingTransformer(config, seed=0)
    choices: dict[str, QuantChoice] = {}
    n_handles = r.u32()
    for _ in range(n_handles):
        name = r.string()
        choice = QuantChoice.from_name(r.string())
        values = r.tensor()
        if name not in model.params:
            raise FormatError(f"{path}: unknown handle {name!r}")
        if values.shape != model.params[name].data.shape:
            raise FormatError(
                f"{path}: handle {name!r} has shape {values.shape}, model "
                f"expects {model.params[name].data.shape}")
        model.params[name].data = np.ascontiguousarray(values)
        choices[name] = choice
    n_aux = r.u32()
    for _ in range(n_aux):
        name = r.string()
        values = r.tensor()
        if name not in model.params:
            raise FormatError(f"{path}: unknown parameter {name!r}")
        model.params[name].data = np.ascontiguousarray(values)
    if r.off != len(r.raw):
        raise FormatError(
            f"{path}: {len(r.raw) - r.off} trailing bytes at byte {r.off}")
    missing = set(model.handle_names()) - set(choices)
    if missing:
        raise FormatError(f"{path}: missing handles {sorted(missing)}")
    return model, choices
