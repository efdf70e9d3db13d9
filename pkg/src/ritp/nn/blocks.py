"""Building blocks: Fourier embeddings, MLPs, attention with relative positional
embeddings, and generator-driven initialization."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .bayes import DropLinear

DTYPE = torch.float64


def init_linear(linear: nn.Linear, generator: torch.Generator) -> nn.Linear:
    """Kaiming-uniform init drawn from an explicit generator."""
    fan_in = linear.in_features
    bound = math.sqrt(1.0 / fan_in)
    with torch.no_grad():
        linear.weight.uniform_(-bound, bound, generator=generator)
        if linear.bias is not None:
            linear.bias.uniform_(-bound, bound, generator=generator)
    return linear


def _make_linear(d_in: int, d_out: int, generator: torch.Generator, bayes_p: float) -> nn.Module:
    if bayes_p > 0.0:
        layer = DropLinear(d_in, d_out, p=bayes_p).to(DTYPE)
    else:
        layer = nn.Linear(d_in, d_out).to(DTYPE)
    return init_linear(layer, generator)


class Mlp(nn.Module):
    """ReLU MLP; optional column-dropout (Bayesian) linears."""

    def __init__(self, dims, generator, bayes_p: float = 0.0):
        super().__init__()
        self.layers = nn.ModuleList(
            [_make_linear(dims[i], dims[i + 1], generator, bayes_p) for i in range(len(dims) - 1)]
        )

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = F.relu(x)
        return x


class FourierEmbedding(nn.Module):
    """Continuous features -> fixed log-spaced Fourier features -> MLP.

    The frequency bank is a buffer, not a parameter: fixed banks keep the
    gradient surface simple and suffice at this scale.
    """

    def __init__(self, in_dim: int, hidden_dim: int, generator, num_bands: int = 8,
                 bayes_p: float = 0.0):
        super().__init__()
        freqs = torch.logspace(-3, 3, num_bands, base=2.0, dtype=DTYPE)
        self.register_buffer("freqs", freqs)
        raw = in_dim * (2 * num_bands + 1)
        self.mlp = Mlp([raw, hidden_dim, hidden_dim], generator, bayes_p=bayes_p)

    def forward(self, x):
        ang = 2.0 * math.pi * x.unsqueeze(-1) * self.freqs
        feats = torch.cat([torch.cos(ang), torch.sin(ang), x.unsqueeze(-1)], dim=-1)
        return self.mlp(feats.flatten(-2))


def attend(q, k, v, mask=None, num_heads: int = 2):
    """Scaled dot-product attention over per-pair keys/values.

    q: [..., Nq, D]; k, v: [..., Nq, Nk, D] (already carrying any relative
    positional terms); mask: [..., Nq, Nk] bool, True = may attend. Rows with
    no attendable key yield zeros; the returned flag marks valid rows.
    """
    d = q.shape[-1]
    dh = d // num_heads
    nq, nk = k.shape[-3], k.shape[-2]
    qh = q.reshape(*q.shape[:-1], num_heads, dh)
    kh = k.reshape(*k.shape[:-1], num_heads, dh)
    vh = v.reshape(*v.shape[:-1], num_heads, dh)
    scores = torch.einsum("...qhd,...qkhd->...qkh", qh, kh) / math.sqrt(dh)
    if mask is not None:
        scores = scores.masked_fill(~mask.unsqueeze(-1), float("-inf"))
        valid = mask.any(dim=-1)
    else:
        valid = torch.ones(scores.shape[:-2], dtype=torch.bool, device=q.device)
    attn = torch.softmax(scores, dim=-2)
    attn = torch.where(valid.unsqueeze(-1).unsqueeze(-1), attn, torch.zeros_like(attn))
    out = torch.einsum("...qkh,...qkhd->...qhd", attn, vh)
    return out.reshape(*q.shape), valid


class RelAttentionBlock(nn.Module):
    """Pre-LN multi-head attention with rel-pos embeddings added to keys and
    values, followed by a residual feed-forward."""

    def __init__(self, hidden_dim: int, num_heads: int, generator, dropout: float = 0.0,
                 bayes_p: float = 0.0):
        super().__init__()
        if hidden_dim % num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        self.num_heads = num_heads
        self.dropout = dropout
        mk = lambda i, o: _make_linear(i, o, generator, bayes_p)
        self.norm_q = nn.LayerNorm(hidden_dim).to(DTYPE)
        self.norm_kv = nn.LayerNorm(hidden_dim).to(DTYPE)
        self.w_q = mk(hidden_dim, hidden_dim)
        self.w_k = mk(hidden_dim, hidden_dim)
        self.w_v = mk(hidden_dim, hidden_dim)
        self.w_rk = mk(hidden_dim, hidden_dim)
        self.w_rv = mk(hidden_dim, hidden_dim)
        self.w_out = mk(hidden_dim, hidden_dim)
        self.norm_ff = nn.LayerNorm(hidden_dim).to(DTYPE)
        self.ff1 = mk(hidden_dim, 2 * hidden_dim)
        self.ff2 = mk(2 * hidden_dim, hidden_dim)

    def forward(self, query, kv, rel_pos_emb=None, mask=None, *, generator=None, training=False):
        """query [.., Nq, D]; kv [.., Nk, D]; rel_pos_emb [.., Nq, Nk, D]."""
        qn = self.norm_q(query)
        kn = self.norm_kv(kv)
        q = self.w_q(qn)
        k = self.w_k(kn).unsqueeze(-3).expand(*qn.shape[:-1], kv.shape[-2], kv.shape[-1])
        v = self.w_v(kn).unsqueeze(-3).expand_as(k)
        if rel_pos_emb is not None:
            k = k + self.w_rk(rel_pos_emb)
            v = v + self.w_rv(rel_pos_emb)
        out, valid = attend(q, k, v, mask=mask, num_heads=self.num_heads)
        out = self.w_out(out)
        out = _dropout(out, self.dropout, generator, training)
        x = query + out
        h = self.ff2(F.relu(self.ff1(self.norm_ff(x))))
        h = _dropout(h, self.dropout, generator, training)
        return x + h, valid


def _dropout(x, p, generator, training):
    if not training or p <= 0.0:
        return x
    keep = torch.empty_like(x).bernoulli_(1.0 - p, generator=generator)
    return x * keep / (1.0 - p)
