"""Deterministic RNG streams: one root seed, fixed spawn keys per consumer."""

import numpy as np

STREAMS = {"data": 0, "init": 1, "gumbel": 2, "split": 3, "batches": 4,
           "finetune": 5}


def rng_stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name],)))
