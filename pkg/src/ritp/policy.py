"""Trajectory policy: query-centric encoder, K-mode Laplace decoder, and the
imitation losses with their stop-gradient contracts.

Modes are decoded in each agent's local frame (current pose at the window's
last step), which is what makes the policy equivariant under rigid motions of
the scene. Losses are likewise evaluated in the local frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .encoder import EncoderConfig, SceneEncoder, SceneEncodings
from .nn.blocks import DTYPE, Mlp, RelAttentionBlock
from .windows import SceneWindow

MIN_SCALE = 1e-3


@dataclass(frozen=True)
class PolicyConfig:
    hidden_dim: int = 16
    num_heads: int = 2
    num_bands: int = 8
    num_layers: int = 1
    num_modes: int = 3
    history_steps: int = 10
    plan_steps: int = 20
    dropout: float = 0.1
    radius: float = 50.0

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            hidden_dim=self.hidden_dim, num_heads=self.num_heads, num_bands=self.num_bands,
            num_layers=self.num_layers, dropout=self.dropout, radius=self.radius,
            with_temporal=True, bayes_p=0.0,
        )


@dataclass
class PolicyOutput:
    """K trajectory modes per agent, agent-local frame; [A, K, T_p, 2] each."""

    proposed_loc: torch.Tensor
    proposed_scale: torch.Tensor
    refined_loc: torch.Tensor
    refined_scale: torch.Tensor
    pi_logits: torch.Tensor  # [A, K]
    origins: np.ndarray  # [A, 2]
    origin_headings: np.ndarray  # [A]

    @property
    def pi(self) -> torch.Tensor:
        return torch.softmax(self.pi_logits, dim=-1)

    def best_mode(self, agent: int = 0) -> int:
        return int(np.argmax(self.pi[agent].detach().numpy()))

    def mode_global(self, agent: int, mode: int, refined: bool = True) -> np.ndarray:
        loc = (self.refined_loc if refined else self.proposed_loc)[agent, mode]
        return self.to_global(agent, loc.detach().numpy())

    def to_global(self, agent: int, local_points: np.ndarray) -> np.ndarray:
        h = self.origin_headings[agent]
        c, s = np.cos(h), np.sin(h)
        rot = np.array([[c, -s], [s, c]])
        return local_points @ rot.T + self.origins[agent]

    def to_local(self, agent: int, global_points: np.ndarray) -> np.ndarray:
        h = self.origin_headings[agent]
        c, s = np.cos(h), np.sin(h)
        rot = np.array([[c, s], [-s, c]])
        return (np.asarray(global_points) - self.origins[agent]) @ rot.T


def select_action(output: PolicyOutput, agent: int = 0) -> np.ndarray:
    """Refined mode with the highest likelihood; ties take the lowest index."""
    return output.mode_global(agent, output.best_mode(agent), refined=True)


class MotionFormer(nn.Module):
    def __init__(self, cfg: PolicyConfig, generator: torch.Generator):
        super().__init__()
        self.cfg = cfg
        D, K, Tp = cfg.hidden_dim, cfg.num_modes, cfg.plan_steps
        self.encoder = SceneEncoder(cfg.encoder(), generator)
        self.mode_queries = nn.Parameter(torch.empty(K, D, dtype=DTYPE))
        with torch.no_grad():
            self.mode_queries.normal_(0.0, 0.5, generator=generator)

        block = lambda: RelAttentionBlock(D, cfg.num_heads, generator, cfg.dropout)
        self.mode_hist_attn = block()
        self.mode_map_attn = block()
        self.mode_agent_attn = block()
        self.mode_mode_attn = block()
        self.propose_head = Mlp([D, D, Tp * 4], generator)

        self.traj_embed = Mlp([Tp * 2, D], generator)
        self.refine_hist_attn = block()
        self.refine_map_attn = block()
        self.refine_agent_attn = block()
        self.refine_mode_attn = block()
        self.refine_head = Mlp([D, D, Tp * 4], generator)
        self.pi_head = Mlp([D, D, 1], generator)

    # -- spec surface -------------------------------------------------------
    def encode_scene(self, window: SceneWindow, *, generator=None, training=False) -> SceneEncodings:
        if window.num_agents < 1:
            raise ValueError("window must contain at least the ego agent")
        return self.encoder.encode_window(window, generator=generator, training=training)

    def decode_modes(self, enc: SceneEncodings, *, generator=None, training=False) -> PolicyOutput:
        kw = dict(generator=generator, training=training)
        window = enc.window
        A = window.num_agents
        K, Tp, D = self.cfg.num_modes, self.cfg.plan_steps, self.cfg.hidden_dim

        current = enc.agent_enc[:, -1, :]  # [A, D]
        q = self.mode_queries[None, :, :] + current[:, None, :]  # [A, K, D]
        rel = self.encoder.rel_embed
        rpe_hist = rel(window.rpe_now_hist)[:, None].expand(A, K, window.horizon, D)
        rpe_map = rel(window.rpe_now_map)[:, None].expand(A, K, -1, D)
        rpe_agent = rel(window.rpe_now_agents)[:, None].expand(A, K, A, D)
        mask_map = (window.rpe_now_map[..., 0] <= self.cfg.radius)[:, None, :].expand(A, K, -1)
        mask_agent = (window.rpe_now_agents[..., 0] <= self.cfg.radius)[:, None, :].expand(A, K, A)
        kv_map = enc.map_enc[None].expand(A, *enc.map_enc.shape)
        kv_agents = current[None].expand(A, A, D)

        x = q
        x, _ = self.mode_hist_attn(x, enc.agent_enc, rpe_hist, **kw)
        x, _ = self.mode_map_attn(x, kv_map, rpe_map, mask=mask_map, **kw)
        x, _ = self.mode_agent_attn(x, kv_agents, rpe_agent, mask=mask_agent, **kw)
        x, _ = self.mode_mode_attn(x, x, None, **kw)
        raw = self.propose_head(x).reshape(A, K, Tp, 4)
        proposed_loc = raw[..., :2]
        proposed_scale = F.softplus(raw[..., 2:]) + MIN_SCALE

        # refinement consumes the proposals with gradients blocked
        y = x.detach() + self.traj_embed(proposed_loc.detach().reshape(A, K, -1))
        y, _ = self.refine_hist_attn(y, enc.agent_enc, rpe_hist, **kw)
        y, _ = self.refine_map_attn(y, kv_map, rpe_map, mask=mask_map, **kw)
        y, _ = self.refine_agent_attn(y, kv_agents, rpe_agent, mask=mask_agent, **kw)
        y, _ = self.refine_mode_attn(y, y, None, **kw)
        raw_r = self.refine_head(y).reshape(A, K, Tp, 4)
        refined_loc = proposed_loc.detach() + raw_r[..., :2]
        refined_scale = F.softplus(raw_r[..., 2:]) + MIN_SCALE
        pi_logits = self.pi_head(y).squeeze(-1)

        origins, headings = window.agent_origins()
        return PolicyOutput(
            proposed_loc=proposed_loc, proposed_scale=proposed_scale,
            refined_loc=refined_loc, refined_scale=refined_scale,
            pi_logits=pi_logits, origins=origins, origin_headings=headings,
        )

    def plan(self, window: SceneWindow) -> np.ndarray:
        """Deterministic eval-mode action for the ego agent, global frame."""
        with torch.no_grad():
            out = self.decode_modes(self.encode_scene(window))
        return select_action(out, agent=0)


def _laplace_nll(target, loc, scale):
    """Per-coordinate Laplace NLL log(2 sigma) + |x - mu| / sigma, summed over x, y."""
    return (torch.log(2.0 * scale) + torch.abs(target - loc) / scale).sum(-1)


def il_loss(output: PolicyOutput, target_global: np.ndarray, agent: int = 0) -> dict:
    """Imitation loss terms for one agent against a (T_p, 2) global target.

    classification: final-point mixture NLL, gradients only into the mixing
    logits. proposal/refinement: mean per-step NLL of the winning mode by
    final displacement; losing modes receive no gradient.
    """
    target = torch.as_tensor(output.to_local(agent, target_global), dtype=DTYPE)
    p_loc = output.proposed_loc[agent]
    p_scale = output.proposed_scale[agent]
    r_loc = output.refined_loc[agent]
    r_scale = output.refined_scale[agent]
    logits = output.pi_logits[agent]

    log_pi = F.log_softmax(logits, dim=-1)
    cls_nll = _laplace_nll(target[-1], r_loc[:, -1].detach(), r_scale[:, -1].detach())
    classification = -torch.logsumexp(log_pi - cls_nll, dim=0)

    with torch.no_grad():
        k_p = int(torch.argmin(torch.linalg.norm(target[-1] - p_loc[:, -1], dim=-1)))
        k_r = int(torch.argmin(torch.linalg.norm(target[-1] - r_loc[:, -1], dim=-1)))
    proposal = _laplace_nll(target, p_loc[k_p], p_scale[k_p]).mean()
    refinement = _laplace_nll(target, r_loc[k_r], r_scale[k_r]).mean()
    total = classification + proposal + refinement
    return {
        "total": total,
        "classification": classification,
        "proposal": proposal,
        "refinement": refinement,
        "winner_proposed": k_p,
        "winner_refined": k_r,
    }


def il_loss_multi(output: PolicyOutput, ego_target: np.ndarray,
                  agent_targets: np.ndarray | None, multi_agent: bool) -> dict:
    """Ego loss plus (optionally) the surrounding agents' supervision terms.

    Turning multi-agent supervision off changes only the extra terms; the ego
    loss value is identical either way.
    """
    ego = il_loss(output, ego_target, agent=0)
    total = ego["total"]
    mas = None
    if multi_agent and agent_targets is not None and len(agent_targets):
        terms = [il_loss(output, agent_targets[i - 1], agent=i)["total"]
                 for i in range(1, output.pi_logits.shape[0])]
        if terms:
            mas = torch.stack(terms).mean()
            total = total + mas
    return {"total": total, "ego": ego["total"], "mas": mas, "ego_terms": ego}
