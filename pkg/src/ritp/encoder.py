"""Query-centric scene encoder shared by the policy, critic, and reward nets.

Pipeline: Fourier embeddings of the local descriptors, temporal self-attention
per agent (windowed variant only), map point aggregation onto each polygon's
first point, map-map self-attention, agent-map cross-attention, and
agent-agent self-attention, all with relative positional embeddings on keys
and values. Attention is masked beyond a fixed neighborhood radius.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .nn.blocks import DTYPE, FourierEmbedding, Mlp, RelAttentionBlock
from .scene import AGENT_TYPES, SEMANTIC_POLYGON, TRAFFIC_LIGHT
from .windows import MapTensors, SceneWindow, SnapshotBatch


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 16
    num_heads: int = 2
    num_bands: int = 8
    num_layers: int = 1
    dropout: float = 0.1
    radius: float = 50.0
    with_temporal: bool = True
    bayes_p: float = 0.0


@dataclass
class SceneEncodings:
    map_enc: torch.Tensor  # [M, D]
    agent_enc: torch.Tensor  # [A, T, D]
    window: SceneWindow


def _embedding(num: int, dim: int, generator: torch.Generator) -> nn.Embedding:
    emb = nn.Embedding(num, dim).to(DTYPE)
    with torch.no_grad():
        emb.weight.normal_(0.0, 0.1, generator=generator)
    return emb


def _trig(x: torch.Tensor, angle_dims: tuple) -> torch.Tensor:
    """Replace angle channels by (cos, sin) pairs.

    Wrapped angles jump between -pi and +pi under tiny perturbations, which
    would break rigid-motion invariance of the Fourier features; trig pairs
    are continuous there.
    """
    parts = []
    for i in range(x.shape[-1]):
        col = x[..., i : i + 1]
        if i in angle_dims:
            parts.extend([torch.cos(col), torch.sin(col)])
        else:
            parts.append(col)
    return torch.cat(parts, dim=-1)


AGENT_ANGLE_DIMS = (1, 3)  # motion-heading and velocity-heading angles
REL_ANGLE_DIMS = (1, 2)  # bearing-minus-heading and heading difference


class SceneEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, generator: torch.Generator):
        super().__init__()
        self.cfg = cfg
        D = cfg.hidden_dim
        bp = cfg.bayes_p
        self.agent_embed = FourierEmbedding(6, D, generator, cfg.num_bands, bayes_p=bp)
        self.map_embed = FourierEmbedding(1, D, generator, cfg.num_bands, bayes_p=bp)
        self.rel_embed_raw = FourierEmbedding(6, D, generator, cfg.num_bands, bayes_p=bp)
        self.type_embed = _embedding(len(AGENT_TYPES), D, generator)
        self.semantic_embed = _embedding(len(SEMANTIC_POLYGON), D, generator)
        self.tl_embed = _embedding(len(TRAFFIC_LIGHT), D, generator)

        block = lambda: RelAttentionBlock(D, cfg.num_heads, generator, cfg.dropout, bayes_p=bp)
        if cfg.with_temporal:
            self.temporal_attn = nn.ModuleList([block() for _ in range(cfg.num_layers)])
        self.map_point_attn = block()
        self.map_map_attn = nn.ModuleList([block() for _ in range(cfg.num_layers)])
        self.agent_map_attn = nn.ModuleList([block() for _ in range(cfg.num_layers)])
        self.agent_agent_attn = nn.ModuleList([block() for _ in range(cfg.num_layers)])

    def _radius_mask(self, rpe: torch.Tensor) -> torch.Tensor:
        return rpe[..., 0] <= self.cfg.radius

    def rel_embed(self, rpe: torch.Tensor) -> torch.Tensor:
        return self.rel_embed_raw(_trig(rpe, REL_ANGLE_DIMS))

    def encode_map(self, mt: MapTensors, *, generator=None, training=False) -> torch.Tensor:
        """[M, D] polygon encodings (first-point aggregation + map-map attention)."""
        kw = dict(generator=generator, training=training)
        pe = self.map_embed(mt.point_feats)
        pe = pe + self.semantic_embed(mt.semantic)[:, None, :] + self.tl_embed(mt.traffic_light)[:, None, :]
        if pe.shape[1] > 1:
            agg, _ = self.map_point_attn(
                pe[:, :1, :], pe[:, 1:, :], self.rel_embed(mt.rpe_points), **kw
            )
            m = agg[:, 0, :]
        else:
            m = pe[:, 0, :]
        mask = self._radius_mask(mt.rpe_m2m)
        rpe = self.rel_embed(mt.rpe_m2m)
        for attn in self.map_map_attn:
            m, _ = attn(m, m, rpe, mask=mask, **kw)
        return m

    def encode_window(self, window: SceneWindow, *, generator=None, training=False) -> SceneEncodings:
        """Scene encodings for a T-step history window: [M, D] and [A, T, D]."""
        kw = dict(generator=generator, training=training)
        map_enc = self.encode_map(window.map, **kw)
        a = self.agent_embed(_trig(window.agent_feats, AGENT_ANGLE_DIMS))
        a = a + self.type_embed(window.agent_types)[:, None, :]
        A, T, D = a.shape
        if self.cfg.with_temporal:
            steps = torch.arange(T)
            causal = steps[None, :, None] >= steps[None, None, :]  # attend to past/self
            rpe_t = self.rel_embed(window.rpe_temporal)
            for attn in self.temporal_attn:
                a, _ = attn(a, a, rpe_t, mask=causal.expand(A, T, T), **kw)
        rpe_am = self.rel_embed(window.rpe_a2m)
        mask_am = self._radius_mask(window.rpe_a2m)
        kv_map = map_enc.unsqueeze(0).expand(A, *map_enc.shape)
        for attn in self.agent_map_attn:
            a, _ = attn(a, kv_map, rpe_am, mask=mask_am, **kw)
        at = a.transpose(0, 1)  # [T, A, D]
        rpe_aa = self.rel_embed(window.rpe_a2a)
        mask_aa = self._radius_mask(window.rpe_a2a)
        for attn in self.agent_agent_attn:
            at, _ = attn(at, at, rpe_aa, mask=mask_aa, **kw)
        return SceneEncodings(map_enc=map_enc, agent_enc=at.transpose(0, 1), window=window)

    def encode_snapshots(self, batch: SnapshotBatch, *, generator=None, training=False) -> torch.Tensor:
        """Per-snapshot agent encodings [B, A, D]; the map is encoded once."""
        kw = dict(generator=generator, training=training)
        map_enc = self.encode_map(batch.map, **kw)
        a = self.agent_embed(_trig(batch.agent_feats, AGENT_ANGLE_DIMS))
        a = a + self.type_embed(batch.agent_types)[None, :, :]
        B, A, D = a.shape
        kv_map = map_enc.unsqueeze(0).expand(B, *map_enc.shape)
        mask_am = self._radius_mask(batch.rpe_a2m) & batch.valid[..., None]
        rpe_am = self.rel_embed(batch.rpe_a2m)
        for attn in self.agent_map_attn:
            a, _ = attn(a, kv_map, rpe_am, mask=mask_am, **kw)
        mask_aa = self._radius_mask(batch.rpe_a2a) & batch.valid[:, None, :] & batch.valid[..., None]
        rpe_aa = self.rel_embed(batch.rpe_a2a)
        for attn in self.agent_agent_attn:
            a, _ = attn(a, a, rpe_aa, mask=mask_aa, **kw)
        return a
