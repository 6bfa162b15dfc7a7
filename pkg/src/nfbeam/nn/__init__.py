from .layers import (
    AdaptiveAvgPool2d,
    BatchNorm2d,
    Context,
    Conv2d,
    Dropout,
    Layer,
    LayerNorm,
    Linear,
    ReLU,
)
from .model import (
    BeamPredictionModel,
    CNNExtractor,
    ResBlock,
    conv_layer_flops,
    flops_breakdown,
    flops_estimate,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .transformer import FeedForward, MultiHeadAttention, TransformerBlock, softmax_last

__all__ = [
    "AdaptiveAvgPool2d",
    "BatchNorm2d",
    "BeamPredictionModel",
    "CNNExtractor",
    "Context",
    "Conv2d",
    "Dropout",
    "FeedForward",
    "Layer",
    "LayerNorm",
    "Linear",
    "MultiHeadAttention",
    "ReLU",
    "ResBlock",
    "TransformerBlock",
    "conv_layer_flops",
    "flops_breakdown",
    "flops_estimate",
    "load_checkpoint",
    "param_count",
    "save_checkpoint",
    "softmax_last",
]
