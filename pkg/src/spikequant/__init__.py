"""Heterogeneous weight quantization for spiking transformers.

Uniform and power-of-two weight quantizers, an analytic per-layer hardware
energy/storage model, a desk-scale spiking transformer, and a bi-level
differentiable search that picks one quantization scheme per layer.
"""

__version__ = "0.1.0"
