"""Column-wise weight dropout: the dropout-as-Bayesian-approximation machinery.

Each weight matrix / dropout pair acts as W = M . diag(z) with z_j ~
Bernoulli drawn per stochastic forward pass: zeroing input column j of M is
the same as dropping input feature j. Masks are sampled once per pass and
shared across every evaluation inside that pass.
"""
from __future__ import annotations

from contextlib import contextmanager

import torch
import torch.nn.functional as F
from torch import nn


class DropLinear(nn.Linear):
    """Linear layer whose input columns can be masked for one forward pass."""

    def __init__(self, in_features: int, out_features: int, p: float = 0.1):
        super().__init__(in_features, out_features)
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must be in [0, 1)")
        self.p = p
        self._column_mask = None  # set via apply_masks for the duration of a pass

    def forward(self, x):
        if self._column_mask is None:
            return F.linear(x, self.weight, self.bias)
        return F.linear(x, masked_weight(self, self._column_mask), self.bias)


def masked_weight(linear: nn.Linear, mask: torch.Tensor) -> torch.Tensor:
    """M . diag(z): zero the input columns of the weight matrix."""
    return linear.weight * mask.unsqueeze(0)


def drop_linears(module: nn.Module):
    """Named DropLinear children, in deterministic registration order."""
    return [(name, m) for name, m in module.named_modules() if isinstance(m, DropLinear)]


def dropout_sample(module: nn.Module, generator: torch.Generator) -> dict:
    """One Bernoulli column mask per DropLinear: z_j = 0 with probability p.

    Returns {qualified_name: mask}; masks are resampled per call.
    """
    masks = {}
    for name, layer in drop_linears(module):
        keep = torch.empty(layer.in_features, dtype=layer.weight.dtype)
        keep.bernoulli_(1.0 - layer.p, generator=generator)
        masks[name] = keep
    return masks


@contextmanager
def apply_masks(module: nn.Module, masks: dict | None):
    """Attach column masks to the DropLinears for the duration of one pass."""
    layers = drop_linears(module)
    try:
        if masks is not None:
            for name, layer in layers:
                layer._column_mask = masks.get(name)
        yield module
    finally:
        for _, layer in layers:
            layer._column_mask = None


def bayes_regularizer(module: nn.Module) -> torch.Tensor:
    """Sum of p_i/2 ||M_i||^2 + 1/2 ||b_i||^2 over the DropLinear layers."""
    total = None
    for _, layer in drop_linears(module):
        term = 0.5 * layer.p * layer.weight.pow(2).sum()
        if layer.bias is not None:
            term = term + 0.5 * layer.bias.pow(2).sum()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("module has no DropLinear layers")
    return total
