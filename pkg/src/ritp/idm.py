"""Intelligent driver model: closed-form car-following acceleration.

Used for reactive background agents, synthetic demonstrations, and the
post-optimizer speed fallback.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HARD_BRAKE = 8.0  # m/s^2, applied when the gap has collapsed


@dataclass(frozen=True)
class IDMParams:
    v0: float = 13.0  # desired speed, m/s
    T: float = 1.5  # time headway, s
    s0: float = 2.0  # minimum gap, m
    a_max: float = 2.0  # m/s^2
    b: float = 3.0  # comfortable deceleration, m/s^2
    delta: float = 4.0  # acceleration exponent

    def __post_init__(self):
        for name in ("v0", "T", "s0", "a_max", "b", "delta"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"IDM parameter {name} must be positive")


def idm_accel(v: float, dv: float, gap: float, params: IDMParams) -> float:
    """IDM acceleration for speed v, closing speed dv = v - v_lead, and gap.

    Free road is encoded as gap = inf; gap <= 0 returns a full brake.
    """
    if gap <= 0.0:
        return -HARD_BRAKE
    s_star = params.s0 + v * params.T + v * dv / (2.0 * np.sqrt(params.a_max * params.b))
    a = params.a_max * (1.0 - (v / params.v0) ** params.delta - (s_star / gap) ** 2)
    return float(np.clip(a, -HARD_BRAKE, params.a_max))


def idm_speed_profile(v_init: float, gap_init: float, v_lead: float, params: IDMParams,
                      n_steps: int, dt: float) -> np.ndarray:
    """Integrated longitudinal profile: array (n_steps + 1,) of station offsets.

    The lead moves at constant v_lead; gap = inf means free road throughout.
    """
    s = 0.0
    v = max(v_init, 0.0)
    lead_s = gap_init
    out = [0.0]
    for _ in range(n_steps):
        gap = lead_s - s if np.isfinite(lead_s) else np.inf
        a = idm_accel(v, v - v_lead if np.isfinite(lead_s) else 0.0, gap, params)
        v = max(v + a * dt, 0.0)
        s += v * dt
        if np.isfinite(lead_s):
            lead_s += v_lead * dt
        out.append(s)
    return np.array(out)
