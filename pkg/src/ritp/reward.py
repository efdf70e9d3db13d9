"""Dropout-Bayesian learned reward over single-step scene descriptors.

The network is the shared scene encoder without its temporal block, with
column-dropout applied before every fully connected layer; one dropout draw
(a realized weight-mask set) is held fixed across all state evaluations inside
a pass. Trajectory returns sum per-state rewards over the plan horizon; the
environment reward subtracts an uncertainty penalty estimated from O
stochastic passes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .dynamics import BicycleState, rollout_tracking
from .encoder import EncoderConfig, SceneEncoder
from .nn.bayes import apply_masks, bayes_regularizer, dropout_sample
from .nn.blocks import Mlp
from .scene import Scenario
from .windows import MapTensors, SnapshotBatch, build_snapshot_batch

IRL_BASE = 1.1  # exponentiation base of the return softmax


@dataclass(frozen=True)
class RewardConfig:
    hidden_dim: int = 16
    num_heads: int = 2
    num_bands: int = 8
    num_layers: int = 1
    plan_steps: int = 20
    dropout_p: float = 0.1
    radius: float = 50.0

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            hidden_dim=self.hidden_dim, num_heads=self.num_heads, num_bands=self.num_bands,
            num_layers=self.num_layers, dropout=0.0, radius=self.radius,
            with_temporal=False, bayes_p=self.dropout_p,
        )


class RewardNet(nn.Module):
    """Scalar per-state reward; stochastic passes are driven by explicit masks,
    so they remain available in eval mode."""

    def __init__(self, cfg: RewardConfig, generator: torch.Generator):
        super().__init__()
        self.cfg = cfg
        self.encoder = SceneEncoder(cfg.encoder(), generator)
        self.head = Mlp([cfg.hidden_dim, cfg.hidden_dim, 1], generator, bayes_p=cfg.dropout_p)

    def sample_masks(self, generator: torch.Generator) -> dict:
        """One realized weight-mask set (a dropout posterior draw)."""
        return dropout_sample(self, generator)

    def state_rewards(self, batch: SnapshotBatch, masks: dict | None = None) -> torch.Tensor:
        """Per-snapshot rewards [B] under one fixed mask set."""
        with apply_masks(self, masks):
            feats = self.encoder.encode_snapshots(batch)
            return self.head(feats[:, 0, :]).squeeze(-1)

    def regularizer(self) -> torch.Tensor:
        return bayes_regularizer(self)


def rollout_predicted_states(state: BicycleState, action: np.ndarray, scenario: Scenario,
                             step: int, map_tensors: MapTensors | None = None) -> SnapshotBatch:
    """Predicted state snapshots under an action: ego tracked by LQR + bicycle,
    other agents replayed from the log (truncated past scenario end)."""
    action = np.asarray(action, dtype=float)
    n = action.shape[0]
    states = rollout_tracking(state, action, n_steps=n)
    snaps = np.array(
        [[s.x, s.y, s.heading, *(s.speed * np.array([np.cos(s.heading), np.sin(s.heading)]))]
         for s in states[1:]]
    )
    prev = np.array([state.x, state.y, state.heading,
                     state.speed * np.cos(state.heading), state.speed * np.sin(state.heading)])
    return build_snapshot_batch(scenario, snaps, step + 1, map_tensors=map_tensors,
                                prev_ego_state=prev)


def trajectory_return(net: RewardNet, batch: SnapshotBatch, masks: dict | None) -> torch.Tensor:
    """Sum of per-state rewards over the horizon under one mask draw."""
    return net.state_rewards(batch, masks).sum()


def return_softmax_nll(returns: torch.Tensor) -> torch.Tensor:
    """-log( b^R_demo / sum_i b^R_i ) with b = 1.1; returns[0] is the demo.

    Stabilized by log-sum-exp in base-b exponent space.
    """
    logits = returns * math.log(IRL_BASE)
    return -(logits[0] - torch.logsumexp(logits, dim=0))


def irl_loss(net: RewardNet, demo_batch: SnapshotBatch, candidate_batches: list,
             masks: dict | None) -> torch.Tensor:
    """Return-softmax demo NLL (base 1.1) plus the dropout regularizer.

    The demo is part of the normalization set; candidate_batches lists the
    sampled alternatives (the demo is prepended internally).
    """
    if not candidate_batches:
        raise ValueError("candidate set must be non-empty")
    returns = [trajectory_return(net, demo_batch, masks)]
    returns += [trajectory_return(net, b, masks) for b in candidate_batches]
    return return_softmax_nll(torch.stack(returns)) + net.regularizer()


def uncertainty_penalized_reward(net: RewardNet, state: BicycleState, action: np.ndarray,
                                 scenario: Scenario, step: int, *, num_passes: int = 10,
                                 penalty: float = 1.5, tau: float = 1.0, sigma: float = 1.0,
                                 generator: torch.Generator,
                                 map_tensors: MapTensors | None = None) -> float:
    """r_t = sum_j (mean_j - penalty * uncertainty_j) over the predicted states.

    uncertainty_j = sigma^2 / tau (aleatoric floor) + variance of the
    per-state rewards across `num_passes` dropout draws.
    """
    if num_passes < 2:
        raise ValueError("need at least 2 stochastic passes")
    batch = rollout_predicted_states(state, action, scenario, step, map_tensors=map_tensors)
    with torch.no_grad():
        samples = torch.stack(
            [net.state_rewards(batch, net.sample_masks(generator)) for _ in range(num_passes)]
        )  # [O, T_p]
    mean = samples.mean(dim=0)
    second_moment = (samples**2).mean(dim=0)
    uncertainty = sigma * sigma / tau + second_moment - mean**2
    return float((mean - penalty * uncertainty).sum())
