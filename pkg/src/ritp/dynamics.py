"""Kinematic bicycle propagation and LQR trajectory tracking.

The tracker regulates a 4-dim error state (lateral offset, heading error,
speed error, station error) against an interpolated reference taken from the
planned trajectory, with a speed-scheduled linearization. Controls are
acceleration and steering rate; a commanded yaw rate is converted to a
steering-rate command through the bicycle geometry.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .geometry import wrap_angle

DT = 0.1
SUBSTEPS = 4

STEERING_LIMIT = 0.6  # rad
ACCEL_LIMIT = 4.0  # m/s^2
STEERING_RATE_LIMIT = 0.5  # rad/s

# error-state weights: (lateral, heading, speed, station); controls (accel, yaw rate)
LQR_Q = (1.0, 10.0, 1.0, 1.0)
LQR_R = (1.0, 10.0)
LOOKAHEAD_STEPS = 2
MIN_SCHED_SPEED = 0.5  # linearization floor; at v=0 the lateral mode is uncontrollable


class RiccatiError(RuntimeError):
    def __init__(self, residual: float):
        self.residual = residual
        super().__init__(f"Riccati iteration did not converge (residual {residual:.3e})")


@dataclass(frozen=True)
class BicycleState:
    x: float
    y: float
    heading: float
    speed: float
    steering: float = 0.0
    wheelbase: float = 3.0
    saturations: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if abs(self.steering) > STEERING_LIMIT + 1e-12:
            raise ValueError(f"|steering| {self.steering} exceeds limit {STEERING_LIMIT}")
        if self.speed < 0.0:
            raise ValueError("speed must be >= 0")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * np.array([np.cos(self.heading), np.sin(self.heading)])


@dataclass(frozen=True)
class ControlInput:
    acceleration: float
    steering_rate: float

    def __post_init__(self):
        if abs(self.acceleration) > ACCEL_LIMIT + 1e-9:
            raise ValueError(f"|acceleration| exceeds {ACCEL_LIMIT}")
        if abs(self.steering_rate) > STEERING_RATE_LIMIT + 1e-9:
            raise ValueError(f"|steering_rate| exceeds {STEERING_RATE_LIMIT}")


def step_bicycle(state: BicycleState, control: ControlInput, dt: float = DT) -> BicycleState:
    """Forward-Euler bicycle step with 4 sub-steps; clamps flagged, not errors.

    Speed and steering are integrated affinely from the step's initial values
    (v0 + a*k*sub), so an unclamped +a step followed by a -a step restores the
    speed bit-exactly.
    """
    x, y, h = state.x, state.y, state.heading
    sub = dt / SUBSTEPS
    saturated = set()
    v = state.speed
    delta = state.steering
    for k in range(SUBSTEPS):
        x += v * np.cos(h) * sub
        y += v * np.sin(h) * sub
        h += v * np.tan(delta) / state.wheelbase * sub
        v = state.speed + control.acceleration * ((k + 1) * sub)
        delta = state.steering + control.steering_rate * ((k + 1) * sub)
        if v < 0.0:
            v = 0.0
            saturated.add("speed_floor")
        if abs(delta) > STEERING_LIMIT:
            delta = float(np.clip(delta, -STEERING_LIMIT, STEERING_LIMIT))
            saturated.add("steering_limit")
    return BicycleState(
        x=float(x),
        y=float(y),
        heading=wrap_angle(h),
        speed=float(v),
        steering=float(delta),
        wheelbase=state.wheelbase,
        saturations=tuple(sorted(saturated)),
    )


def riccati_solution(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
                     tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Fixed point P of P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA.

    Iterated until the sup-norm change drops below tol; raises RiccatiError
    with the last residual on non-convergence (the divergence signal for
    unstabilizable pairs).
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    P = Q.copy()
    residual = np.inf
    with np.errstate(over="ignore", invalid="ignore"):  # divergence handled below
        for _ in range(max_iter):
            BtP = B.T @ P
            K = np.linalg.solve(R + BtP @ B, BtP @ A)
            P_next = Q + A.T @ P @ A - A.T @ P @ B @ K
            residual = float(np.max(np.abs(P_next - P)))
            P = P_next
            if residual < tol or not np.isfinite(residual):
                break
    if not np.isfinite(residual) or residual >= tol:
        raise RiccatiError(residual)
    return P


def lqr_gain(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
             tol: float = 1e-10, max_iter: int = 10_000) -> np.ndarray:
    """Discrete-time LQR gain K = (R + B'PB)^-1 B'PA from the Riccati fixed point."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    P = riccati_solution(A, B, Q, R, tol=tol, max_iter=max_iter)
    BtP = B.T @ P
    return np.linalg.solve(np.asarray(R, dtype=float) + BtP @ B, BtP @ A)


@lru_cache(maxsize=512)
def _tracking_gain(v_sched: float, dt: float) -> np.ndarray:
    # x = (e_y, e_psi, e_v, e_s); u = (accel, yaw rate)
    A = np.array(
        [
            [1.0, dt * v_sched, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, dt, 1.0],
        ]
    )
    B = np.array([[0.0, 0.0], [0.0, dt], [dt, 0.0], [0.0, 0.0]])
    return lqr_gain(A, B, np.diag(LQR_Q), np.diag(LQR_R))


def _reference_at(action: np.ndarray, idx: float, fallback_heading: float, dt: float):
    """Interpolated pose/speed/yaw-rate reference at fractional plan index idx.

    action[j] is the pose the plan wants occupied (j+1)*dt after plan time.
    """
    n = action.shape[0]
    idx = float(np.clip(idx, 0.0, n - 1))
    i0 = int(np.floor(idx))
    i1 = min(i0 + 1, n - 1)
    frac = idx - i0
    pos = (1 - frac) * action[i0] + frac * action[i1]
    deltas = np.diff(action, axis=0)
    seg_len = np.linalg.norm(deltas, axis=1)
    speeds = seg_len / dt
    hs = np.full(len(deltas), np.nan)
    live = seg_len > 1e-9
    hs[live] = np.arctan2(deltas[live, 1], deltas[live, 0])
    last = fallback_heading
    for i in range(len(hs)):  # degenerate segments inherit the previous heading
        if np.isnan(hs[i]):
            hs[i] = last
        last = hs[i]
    i_h = min(i0, len(hs) - 1)
    heading = float(hs[i_h])
    v_ref = float(speeds[i_h])
    if i_h + 1 < len(hs) and live[i_h] and live[i_h + 1]:
        yaw_rate = float(wrap_angle(hs[i_h + 1] - hs[i_h]) / dt)
    else:
        yaw_rate = 0.0
    return pos, heading, v_ref, yaw_rate


def track_trajectory(state: BicycleState, action: np.ndarray, step_in_plan: int,
                     dt: float = DT) -> ControlInput:
    """LQR tracking control against the reference at the lookahead time.

    The station error extrapolates the vehicle forward by its own speed over
    the lookahead, so a state exactly on a constant-speed reference yields
    zero control. Degenerate plans (all points coincident) trigger a
    full-brake, zero-steer fallback.
    """
    action = np.asarray(action, dtype=float)
    if action.ndim != 2 or action.shape[0] < step_in_plan + 1:
        raise ValueError("action must hold at least step_in_plan + 1 points")
    spread = np.max(np.linalg.norm(action - action[0], axis=1))
    if spread < 1e-9:
        return ControlInput(acceleration=-ACCEL_LIMIT, steering_rate=0.0)

    # at wall step k, time (k + L)*dt after plan start maps to action index k + L - 1
    lookahead_s = LOOKAHEAD_STEPS * dt
    pos_ref, h_ref, v_ref, yaw_ref = _reference_at(
        action, step_in_plan + LOOKAHEAD_STEPS - 1, state.heading, dt
    )
    offset = state.position - pos_ref
    tangent = np.array([np.cos(h_ref), np.sin(h_ref)])
    normal = np.array([-tangent[1], tangent[0]])
    e = np.array(
        [
            float(offset @ normal),
            wrap_angle(state.heading - h_ref),
            state.speed - v_ref,
            float(offset @ tangent) + state.speed * lookahead_s,
        ]
    )
    v_sched = max(round(max(state.speed, v_ref), 1), MIN_SCHED_SPEED)
    K = _tracking_gain(v_sched, dt)
    u = -K @ e
    accel = float(np.clip(u[0], -ACCEL_LIMIT, ACCEL_LIMIT))
    yaw_cmd = yaw_ref + u[1]
    delta_des = float(np.arctan(state.wheelbase * yaw_cmd / max(state.speed, MIN_SCHED_SPEED)))
    delta_des = float(np.clip(delta_des, -STEERING_LIMIT, STEERING_LIMIT))
    rate = float(np.clip((delta_des - state.steering) / dt, -STEERING_RATE_LIMIT, STEERING_RATE_LIMIT))
    return ControlInput(acceleration=accel, steering_rate=rate)


def rollout_tracking(state: BicycleState, action: np.ndarray, n_steps: int | None = None,
                     dt: float = DT) -> list:
    """Propagate a state along a plan with the LQR tracker; returns n_steps+1 states."""
    action = np.asarray(action, dtype=float)
    if n_steps is None:
        n_steps = action.shape[0]
    states = [state]
    current = state
    for j in range(n_steps):
        control = track_trajectory(current, action, min(j, action.shape[0] - 1), dt)
        current = step_bicycle(current, control, dt)
        states.append(current)
    return states
