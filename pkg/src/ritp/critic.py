"""Twin critics with target copies: action-as-query cross-attention over the
scene encodings, plus the TD target and soft-update machinery."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .encoder import EncoderConfig, SceneEncoder, SceneEncodings
from .nn.blocks import DTYPE, FourierEmbedding, Mlp, RelAttentionBlock, init_linear
from .windows import SceneWindow


@dataclass(frozen=True)
class CriticConfig:
    hidden_dim: int = 16
    num_heads: int = 2
    num_bands: int = 8
    num_layers: int = 1
    plan_steps: int = 20
    dropout: float = 0.1
    radius: float = 50.0

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            hidden_dim=self.hidden_dim, num_heads=self.num_heads, num_bands=self.num_bands,
            num_layers=self.num_layers, dropout=self.dropout, radius=self.radius,
            with_temporal=True, bayes_p=0.0,
        )


class CriticNet(nn.Module):
    """Scalar state-action value from scene encodings and a trajectory action."""

    def __init__(self, cfg: CriticConfig, generator: torch.Generator):
        super().__init__()
        self.cfg = cfg
        D = cfg.hidden_dim
        self.encoder = SceneEncoder(cfg.encoder(), generator)
        self.point_embed = FourierEmbedding(3, D, generator, cfg.num_bands)
        self.gru = nn.GRU(D, D, batch_first=True).to(DTYPE)
        with torch.no_grad():
            for name, p in self.gru.named_parameters():
                bound = (1.0 / D) ** 0.5
                p.uniform_(-bound, bound, generator=generator)
        block = lambda: RelAttentionBlock(D, cfg.num_heads, generator, cfg.dropout)
        self.action_hist_attn = block()
        self.action_map_attn = block()
        self.action_agent_attn = block()
        self.value_head = Mlp([D, D, 1], generator)

    def encode_scene(self, window: SceneWindow, *, generator=None, training=False) -> SceneEncodings:
        return self.encoder.encode_window(window, generator=generator, training=training)

    def values(self, enc: SceneEncodings, actions: np.ndarray, *, generator=None,
               training=False) -> torch.Tensor:
        """Critic values for a stack of actions [n, T_p, 2] (global frame)."""
        kw = dict(generator=generator, training=training)
        window = enc.window
        actions = np.asarray(actions, dtype=float)
        if actions.ndim == 2:
            actions = actions[None]
        n, Tp, _ = actions.shape
        origin = window.ego_position()
        h = window.ego_heading()
        c, s = np.cos(h), np.sin(h)
        rot = np.array([[c, s], [-s, c]])
        local = (actions - origin) @ rot.T
        tau = (np.arange(1, Tp + 1) / Tp)[None, :, None].repeat(n, axis=0)
        feats = torch.as_tensor(np.concatenate([local, tau], axis=-1), dtype=DTYPE)

        emb = self.point_embed(feats)  # [n, Tp, D]
        _, hidden = self.gru(emb)
        q = hidden[0][:, None, :]  # [n, 1, D]

        rel = self.encoder.rel_embed
        A = window.num_agents
        ego_hist = enc.agent_enc[0]  # [T, D]
        rpe_hist = rel(window.rpe_now_hist[0])[None, None].expand(n, 1, -1, -1)
        q, _ = self.action_hist_attn(q, ego_hist[None].expand(n, *ego_hist.shape), rpe_hist, **kw)
        rpe_map = rel(window.rpe_now_map[0])[None, None].expand(n, 1, -1, -1)
        mask_map = (window.rpe_now_map[0, :, 0] <= self.cfg.radius)[None, None].expand(n, 1, -1)
        kv_map = enc.map_enc[None].expand(n, *enc.map_enc.shape)
        q, _ = self.action_map_attn(q, kv_map, rpe_map, mask=mask_map, **kw)
        agents_now = enc.agent_enc[:, -1, :]
        rpe_ag = rel(window.rpe_now_agents[0])[None, None].expand(n, 1, A, -1)
        mask_ag = (window.rpe_now_agents[0, :, 0] <= self.cfg.radius)[None, None].expand(n, 1, A)
        q, _ = self.action_agent_attn(q, agents_now[None].expand(n, A, -1), rpe_ag, mask=mask_ag, **kw)
        return self.value_head(q[:, 0, :]).squeeze(-1)

    def value(self, enc: SceneEncodings, action: np.ndarray, **kw) -> torch.Tensor:
        return self.values(enc, action, **kw)[0]


class CriticEnsemble:
    """Online twins plus frozen target copies updated only by soft_update."""

    def __init__(self, cfg: CriticConfig, generator: torch.Generator, xi: float = 0.005):
        if not 0.0 < xi < 1.0:
            raise ValueError("xi must lie in (0, 1)")
        self.q1 = CriticNet(cfg, generator)
        self.q2 = CriticNet(cfg, generator)
        self.target_q1 = copy.deepcopy(self.q1)
        self.target_q2 = copy.deepcopy(self.q2)
        for net in (self.target_q1, self.target_q2):
            for p in net.parameters():
                p.requires_grad_(False)
        self.xi = xi

    def soft_update(self) -> None:
        """theta' <- xi theta + (1 - xi) theta', elementwise."""
        with torch.no_grad():
            for online, target in ((self.q1, self.target_q1), (self.q2, self.target_q2)):
                for p, pt in zip(online.parameters(), target.parameters()):
                    pt.mul_(1.0 - self.xi).add_(self.xi * p)

    def online_parameters(self):
        return list(self.q1.parameters()) + list(self.q2.parameters())


def td_target(reward: float, next_window: SceneWindow | None, ensemble: CriticEnsemble,
              target_action: np.ndarray | None, gamma: float, terminal: bool = False) -> float:
    """q = r + gamma * min(Q'_1, Q'_2) at the noisy target-policy action.

    `target_action` is the already-noised action at the next state (the caller
    draws the clipped trajectory noise); terminal transitions use q = r.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    if terminal or gamma == 0.0 or next_window is None:
        return float(reward)
    with torch.no_grad():
        enc1 = ensemble.target_q1.encode_scene(next_window)
        q1 = float(ensemble.target_q1.value(enc1, target_action))
        enc2 = ensemble.target_q2.encode_scene(next_window)
        q2 = float(ensemble.target_q2.value(enc2, target_action))
    return float(reward + gamma * min(q1, q2))
