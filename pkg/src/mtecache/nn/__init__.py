"""Minimal reverse-mode differentiation core and Transformer primitives."""

from mtecache.nn.gradcheck import gradient_check
from mtecache.nn.layers import (
    EncoderConfig,
    ParameterStore,
    embed_sequence,
    encoder_layer,
    multi_head_attention,
    self_attention,
    transformer_encode,
)
from mtecache.nn.losses import bce_loss, mse_loss
from mtecache.nn.optim import Adam, AdamState, adam_step
from mtecache.nn.tensor import Tensor

__all__ = [
    "Adam",
    "AdamState",
    "EncoderConfig",
    "ParameterStore",
    "Tensor",
    "adam_step",
    "bce_loss",
    "embed_sequence",
    "encoder_layer",
    "gradient_check",
    "mse_loss",
    "multi_head_attention",
    "self_attention",
    "transformer_encode",
]
