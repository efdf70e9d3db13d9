"""Minimal differentiable-computation substrate shared by the three networks.

Everything runs in float64 on CPU: desk scale favors gradient-check fidelity
over speed. All stochastic behavior (parameter init, dropout masks) is driven
by explicit torch.Generator handles, never global RNG state.
"""

from .bayes import DropLinear, apply_masks, dropout_sample, masked_weight
from .blocks import FourierEmbedding, Mlp, RelAttentionBlock, attend, init_linear
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import directional_grad_check

__all__ = [
    "DropLinear",
    "FourierEmbedding",
    "Mlp",
    "RelAttentionBlock",
    "apply_masks",
    "attend",
    "directional_grad_check",
    "dropout_sample",
    "init_linear",
    "load_checkpoint",
    "masked_weight",
    "save_checkpoint",
]
