from .adam import Adam
from .core import Module, Parameter, uniform_init
from .layers import (
    Conv2d,
    Dense,
    Flatten,
    LayerNorm,
    LeakyReLU,
    ReLU,
    Reshape,
    SelfAttention,
    Sequential,
    Sigmoid,
    TransformerBlock,
)

__all__ = [
    "Adam",
    "Conv2d",
    "Dense",
    "Flatten",
    "LayerNorm",
    "LeakyReLU",
    "Module",
    "Parameter",
    "ReLU",
    "Reshape",
    "SelfAttention",
    "Sequential",
    "Sigmoid",
    "TransformerBlock",
    "uniform_init",
]
