import numpy as np
import pytest

from spikequant.data import generate_synthetic
from spikequant.spiketransformer import ModelConfig


def make_tiny_config(**over):
    base = dict(time_steps=2, blocks=1, embed_dim=8, heads=2, mlp_ratio=2,
                tokenizer_channels=(2, 4, 4, 8, 8), tokenizer_strides=(1, 2, 1, 2),
                height=16, width=16, classes=2)
    base.update(over)
    return ModelConfig(**base)


@pytest.fixture
def tiny_config():
    return make_tiny_config()


@pytest.fixture
def tiny_dataset():
    return generate_synthetic(classes=2, n_per_class=8, time_steps=2,
                              height=16, width=16, seed=13)
