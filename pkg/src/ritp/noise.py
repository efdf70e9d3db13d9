"""Trajectory-shaped exploration noise.

One scalar magnitude eps ~ N(0, beta * d^2) and one direction theta ~ U[0, 2pi)
are drawn per call, with d the displacement from the ego position to the
action's final point. Point j is offset by (j / T_p) * eps * (cos theta,
sin theta), so all offsets are collinear and grow linearly along the plan.
The clipped variant bounds eps to [-c * d^2, c * d^2] (bound taken literally:
it scales with d^2 while the standard deviation scales with d * sqrt(beta)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseParams:
    beta: float = 0.1
    beta_prime: float = 0.2
    clip_c: float = 0.5

    def __post_init__(self):
        if self.beta < 0.0 or self.beta_prime < 0.0:
            raise ValueError("noise strengths must be >= 0")
        if self.clip_c <= 0.0:
            raise ValueError("clip_c must be > 0")


def draw_noise_scalars(beta: float, d: float, rng: np.random.Generator, size=None):
    """eps ~ N(0, beta * d^2); vectorized for Monte Carlo checks."""
    std = np.sqrt(beta) * d
    return rng.normal(0.0, 1.0, size=size) * std


def draw_clipped_noise_scalars(beta_prime: float, clip_c: float, d: float,
                               rng: np.random.Generator, size=None):
    """eps ~ clip(N(0, beta' * d^2), -c * d^2, c * d^2)."""
    eps = draw_noise_scalars(beta_prime, d, rng, size=size)
    bound = clip_c * d * d
    return np.clip(eps, -bound, bound)


def _apply(action: np.ndarray, eps: float, theta: float) -> np.ndarray:
    n = action.shape[0]
    alpha = np.arange(1, n + 1) / n
    direction = np.array([np.cos(theta), np.sin(theta)])
    return action + (alpha * eps)[:, None] * direction[None, :]


def apply_trajectory_noise(action: np.ndarray, ego_position, beta: float,
                           rng: np.random.Generator) -> np.ndarray:
    """Exploration noise on a (T_p, 2) action; d = 0 returns the action unchanged."""
    action = np.asarray(action, dtype=float)
    d = float(np.linalg.norm(action[-1] - np.asarray(ego_position, dtype=float)))
    if beta == 0.0 or d == 0.0:
        return action.copy()
    eps = float(draw_noise_scalars(beta, d, rng))
    theta = float(rng.uniform(0.0, 2.0 * np.pi))
    return _apply(action, eps, theta)


def apply_clipped_trajectory_noise(action: np.ndarray, ego_position, beta_prime: float,
                                   clip_c: float, rng: np.random.Generator) -> np.ndarray:
    """Target-policy variant: same shape, eps clipped to [-c d^2, c d^2]."""
    action = np.asarray(action, dtype=float)
    d = float(np.linalg.norm(action[-1] - np.asarray(ego_position, dtype=float)))
    if beta_prime == 0.0 or d == 0.0:
        return action.copy()
    eps = float(draw_clipped_noise_scalars(beta_prime, clip_c, d, rng))
    theta = float(rng.uniform(0.0, 2.0 * np.pi))
    return _apply(action, eps, theta)
