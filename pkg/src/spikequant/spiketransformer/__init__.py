from .model import (
    LIFConfig, LayerHandle, ModelConfig, SpikingTransformer,
    batch_to_time_major, enumerate_layer_specs, enumerate_layers,
    forward_batch, lif_sequence,
    lif_step, mlp_forward, model_forward, ssa_forward, tokenizer_forward,
)
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "LIFConfig", "LayerHandle", "ModelConfig", "SpikingTransformer",
    "batch_to_time_major", "enumerate_layer_specs", "enumerate_layers", "forward_batch",
    "lif_sequence", "lif_step", "mlp_forward", "model_forward",
    "ssa_forward", "tokenizer_forward", "load_checkpoint", "save_checkpoint",
]
