"""Desk-scale event-stream data.

A deterministic synthetic generator of DVS-like spike patterns (moving
oriented bars, one orientation per class), time-binning of raw event lists
into binary frames, and a bit-exact on-disk tensor format.

Tensor file layout (all little-endian):

    magic   4 bytes  b"SHQ1"
    version u16      1
    rank    u16
    dims    rank x u32
    label   u32      0xFFFFFFFF when unlabeled
    payload prod(dims) x float32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"SHQ1"
FORMAT_VERSION = 1
UNLABELED = 0xFFFFFFFF

#: Polarity channel order in every frame tensor.
CH_OFF, CH_ON = 0, 1

SPLIT_NAMES = ("train", "val", "test")
DEFAULT_SPLIT_FRACTIONS = {"train": 0.64, "val": 0.16, "test": 0.20}


@dataclass
class EventFrameTensor:
    """Time-binned spike input of shape [T, 2, H, W] with values in [0, 1]."""

    values: np.ndarray
    label: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 4 or v.shape[1] != 2:
            raise ValidationError(
                f"event frames must have shape [T, 2, H, W], got {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValidationError("event frame values must lie in [0, 1]")
        self.values = v

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def H(self) -> int:
        return self.values.shape[2]

    @property
    def W(self) -> int:
        return self.values.shape[3]


@dataclass
class DatasetManifest:
    classes: int
    time_steps: int
    height: int
    width: int
    seed: int
    split_counts: dict = field(default_factory=dict)
    split_assignment: list = field(default_factory=list)


@dataclass
class Dataset:
    """All samples plus the train / search-val / test split bookkeeping."""

    frames: np.ndarray  # [N, T, 2, H, W] float32
    labels: np.ndarray  # [N] int64
    splits: dict        # split name -> index array
    manifest: DatasetManifest

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[split]
        return self.frames[idx], self.labels[idx]


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

def generate_synthetic(classes: int, n_per_class: int, time_steps: int,
                       height: int, width: int, seed: int,
                       noise_rate: float = 0.02) -> Dataset:
    """Moving oriented bars, one orientation per class.

    Class ``k`` is a bar at angle ``k * pi / classes`` drifting across the
    field over the time steps; pixels entering the bar emit ON events,
    pixels it leaves emit OFF events.  Per-pixel Bernoulli noise is OR-ed
    in.  Bit-deterministic given the seed.
    """
    if classes < 2:
        raise ValidationError(f"need at least 2 classes, got {classes}")
    if height < 16 or width < 16:
        raise ValidationError(
            f"field must be at least 16x16, got {height}x{width}")
    if n_per_class < 1 or time_steps < 1:
        raise ValidationError("n_per_class and time_steps must be positive")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    speed = min(height, width) / (4.0 * time_steps)
    half_thick = 1.5

    n_total = classes * n_per_class
    frames = np.zeros((n_total, time_steps, 2, height, width), dtype=np.float32)
    labels = np.zeros(n_total, dtype=np.int64)

    i = 0
    for k in range(classes):
        phi = k * np.pi / classes
        nx, ny = -np.sin(phi), np.cos(phi)  # drift normal to the bar
        for _ in range(n_per_class):
            phase = rng.uniform(-speed, speed)
            direction = 1.0 if rng.random() < 0.5 else -1.0

            def coverage(t: float) -> np.ndarray:
                off = direction * speed * (t - (time_steps - 1) / 2.0) + phase
                d = (xs - cx - off * nx) * nx + (ys - cy - off * ny) * ny
                return np.abs(d) <= half_thick

            prev = coverage(-1.0)
            for t in range(time_steps):
                cur = coverage(float(t))
                frames[i, t, CH_ON][cur & ~prev] = 1.0
                frames[i, t, CH_OFF][prev & ~cur] = 1.0
                prev = cur
            if noise_rate > 0.0:
                noise = rng.random(size=(time_steps, 2, height, width)) < noise_rate
                frames[i][noise] = 1.0
            labels[i] = k
            i += 1

    splits = _stratified_splits(labels, rng)
    assignment = [""] * n_total
    for name, idx in splits.items():
        for j in idx:
            assignment[j] = name
    manifest = DatasetManifest(
        classes=classes, time_steps=time_steps, height=height, width=width,
        seed=seed,
        split_counts={name: int(len(idx)) for name, idx in splits.items()},
        split_assignment=assignment)
    return Dataset(frames=frames, labels=labels, splits=splits, manifest=manifest)


def _stratified_splits(labels: np.ndarray, rng) -> dict:
    """Disjoint, exhaustive 64/16/20 split drawn per class."""
    buckets = {name: [] for name in SPLIT_NAMES}
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        rng.shuffle(idx)
        n = len(idx)
        n_tr = int(round(DEFAULT_SPLIT_FRACTIONS["train"] * n))
        n_va = int(round(DEFAULT_SPLIT_FRACTIONS["val"] * n))
        n_tr = max(1, min(n_tr, n - 2))
        n_va = max(1, min(n_va, n - n_tr - 1))
        buckets["train"].extend(idx[:n_tr])
        buckets["val"].extend(idx[n_tr:n_tr + n_va])
        buckets["test"].extend(idx[n_tr + n_va:])
    return {name: np.array(sorted(v), dtype=np.int64) for name, v in buckets.items()}


# ---------------------------------------------------------------------------
# event binning
# ---------------------------------------------------------------------------

def bin_events(events, time_steps: int, height: int, width: int,
               t_max: float) -> EventFrameTensor:
    """Bin raw ``(t, x, y, polarity)`` events into binary frames.

    An event lands in bin ``floor(t * T / t_max)`` clamped to ``T - 1``;
    repeated events in one cell clip to 1.
    """
    if t_max <= 0:
        raise ValidationError(f"t_max must be positive, got {t_max}")
    values = np.zeros((time_steps, 2, height, width), dtype=np.float32)
    for n, (t, x, y, pol) in enumerate(events):
        if not (0 <= x < width and 0 <= y < height):
            raise ValidationError(
                f"event #{n} at (t={t}, x={x}, y={y}, polarity={pol}) is "
                f"outside the {width}x{height} sensor")
        if not (0 <= t <= t_max):
            raise ValidationError(
                f"event #{n} at (t={t}, x={x}, y={y}, polarity={pol}) has "
                f"timestamp outside [0, {t_max}]")
        b = min(int(t * time_steps / t_max), time_steps - 1)
        values[b, CH_ON if pol else CH_OFF, int(y), int(x)] = 1.0
    return EventFrameTensor(values=values)


# ---------------------------------------------------------------------------
# tensor file format
# ---------------------------------------------------------------------------

def save_tensor(path, values: np.ndarray, label: int | None = None) -> None:
    values = np.asarray(values, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HH", FORMAT_VERSION, values.ndim))
        f.write(struct.pack(f"<{values.ndim}I", *values.shape))
        f.write(struct.pack("<I", UNLABELED if label is None else int(label)))
        f.write(values.astype("<f4").tobytes(order="C"))


def load_tensor(path) -> tuple[np.ndarray, int | None]:
    raw = Path(path).read_bytes()

    def need(offset: int, n: int) -> bytes:
        if offset + n > len(raw):
            raise FormatError(
                f"{path}: truncated at byte {len(raw)}, needed {offset + n}")
        return raw[offset:offset + n]

    if need(0, 4) != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte 0")
    version, rank = struct.unpack("<HH", need(4, 4))
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    dims = struct.unpack(f"<{rank}I", need(8, 4 * rank))
    off = 8 + 4 * rank
    (label_raw,) = struct.unpack("<I", need(off, 4))
    off += 4
    count = int(np.prod(dims)) if rank else 1
    payload = need(off, 4 * count)
    if len(raw) != off + 4 * count:
        raise FormatError(
            f"{path}: {len(raw) - off - 4 * count} trailing bytes at byte "
            f"{off + 4 * count}")
    values = np.frombuffer(payload, dtype="<f4").reshape(dims)
    label = None if label_raw == UNLABELED else int(label_raw)
    return values.copy(), label


def save_dataset(directory, ds: Dataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m = ds.manifest
    lines = [
        f"classes={m.classes}",
        f"time_steps={m.time_steps}",
        f"height={m.height}",
        f"width={m.width}",
        f"seed={m.seed}",
        f"samples={len(ds.labels)}",
        f"splits={','.join(m.split_assignment)}",
    ]
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for i in range(len(ds.labels)):
        save_tensor(directory / f"sample_{i:05d}.shq", ds.frames[i],
                    int(ds.labels[i]))


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.txt"
    if not manifest_path.exists():
        raise FormatError(f"{manifest_path}: missing manifest")
    kv = {}
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
    n = int(kv["samples"])
    assignment = kv["splits"].split(",")
    if len(assignment) != n:
        raise FormatError(
            f"{manifest_path}: split list has {len(assignment)} entries for "
            f"{n} samples")
    frames, labels = [], []
    for i in range(n):
        values, label = load_tensor(directory / f"sample_{i:05d}.shq")
        frames.append(values)
        labels.append(UNLABELED if label is None else label)
    splits = {name: np.array([i for i, s in enumerate(assignment) if s == name],
                             dtype=np.int64)
              for name in SPLIT_NAMES}
    manifest = DatasetManifest(
        classes=int(kv["classes"]), time_steps=int(kv["time_steps"]),
        height=int(kv["height"]), width=int(kv["width"]), seed=int(kv["seed"]),
        split_counts={name: int(len(idx)) for name, idx in splits.items()},
        split_assignment=assignment)
    return Dataset(frames=np.stack(frames), labels=np.array(labels, dtype=np.int64),
                   splits=splits, manifest=manifest)


def iterate_batches(frames: np.ndarray, labels: np.ndarray, batch_size: int,
                    rng=None):
    """Yield (frames, labels) minibatches, shuffled when an rng is given."""
    n = len(labels)
    order = np.arange(n)
    if rng is not None:
        rng.shuffle(order)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield frames[idx], labels[idx]
