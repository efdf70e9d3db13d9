"""Candidate-action generation from piecewise polynomials in the Frenet frame.

Longitudinal motion x(t) is quartic per piece (terminal position free, speed
targeted); lateral motion y(t) is quintic per piece. A maneuver is fit as one
master profile over its duration and split at the knots, which keeps position,
velocity, and acceleration continuous there by construction; when the maneuver
ends before the plan horizon a constant-speed hold piece is appended.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import BicycleState
from .frenet import ReferenceLine, frenet_arrays_to_cartesian, project_to_frenet
from .geometry import wrap_angle


class SamplerError(RuntimeError):
    """No feasible samples; widen the configured grids."""


def fit_longitudinal_piece(start, end, duration: float) -> np.ndarray:
    """Quartic coefficients matching (x, xd, xdd) at t=0 and (xd, xdd) at t=duration."""
    if duration <= 1e-9:
        raise ValueError("duration underflow")
    x0, v0, a0 = start
    vT, aT = end
    T = duration
    rows = np.array(
        [
            [1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 2.0, 0.0, 0.0],
            [0.0, 1.0, 2 * T, 3 * T**2, 4 * T**3],
            [0.0, 0.0, 2.0, 6 * T, 12 * T**2],
        ]
    )
    rhs = np.array([x0, v0, a0, vT, aT])
    return np.linalg.solve(rows, rhs)


def fit_lateral_piece(start, end, duration: float) -> np.ndarray:
    """Quintic coefficients matching (y, yd, ydd) at both ends."""
    if duration <= 1e-9:
        raise ValueError("duration underflow")
    y0, v0, a0 = start
    yT, vT, aT = end
    T = duration
    rows = np.array(
        [
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 2.0, 0.0, 0.0, 0.0],
            [1.0, T, T**2, T**3, T**4, T**5],
            [0.0, 1.0, 2 * T, 3 * T**2, 4 * T**3, 5 * T**4],
            [0.0, 0.0, 2.0, 6 * T, 12 * T**2, 20 * T**3],
        ]
    )
    rhs = np.array([y0, v0, a0, yT, vT, aT])
    return np.linalg.solve(rows, rhs)


def poly_eval(coeffs: np.ndarray, t, order: int = 0):
    """Evaluate a polynomial (coeffs low->high) or its `order`-th derivative."""
    c = np.asarray(coeffs, dtype=float)
    for _ in range(order):
        c = c[1:] * np.arange(1, len(c))
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for ck in c[::-1]:
        out = out * t + ck
    return out


@dataclass(frozen=True)
class PolyPiece:
    duration: float
    p_x: np.ndarray  # 5 quartic coefficients, local time
    p_y: np.ndarray  # 6 quintic coefficients, local time


@dataclass(frozen=True)
class PiecewisePolyTrajectory:
    pieces: tuple
    frame: str = ""  # reference-line id
    label: str = ""

    @property
    def total_duration(self) -> float:
        return float(sum(p.duration for p in self.pieces))

    def _locate(self, t: np.ndarray):
        starts = np.concatenate([[0.0], np.cumsum([p.duration for p in self.pieces])])
        idx = np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(self.pieces) - 1)
        return idx, t - starts[idx]

    def eval(self, t, order: int = 0):
        """(x, y) value or derivative arrays at times t (clamped to the span)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        t = np.clip(t, 0.0, self.total_duration)
        idx, local = self._locate(t)
        x = np.empty_like(t)
        y = np.empty_like(t)
        for i, piece in enumerate(self.pieces):
            m = idx == i
            if np.any(m):
                x[m] = poly_eval(piece.p_x, local[m], order)
                y[m] = poly_eval(piece.p_y, local[m], order)
        return x, y

    def knot_residuals(self) -> float:
        """Largest mismatch of value/velocity/acceleration across interior knots."""
        worst = 0.0
        for a, b in zip(self.pieces[:-1], self.pieces[1:]):
            for order in range(3):
                xa = poly_eval(a.p_x, np.array([a.duration]), order)[0]
                xb = poly_eval(b.p_x, np.array([0.0]), order)[0]
                ya = poly_eval(a.p_y, np.array([a.duration]), order)[0]
                yb = poly_eval(b.p_y, np.array([0.0]), order)[0]
                worst = max(worst, abs(xa - xb), abs(ya - yb))
        return worst

    def cartesian_action(self, line: ReferenceLine, horizon_steps: int, dt: float) -> np.ndarray:
        """Sample (horizon_steps, 2) Cartesian points at t = dt, 2dt, ..."""
        t = dt * np.arange(1, horizon_steps + 1)
        s, l = self.eval(t)
        return frenet_arrays_to_cartesian(s, l, line)


@dataclass(frozen=True)
class SamplerConfig:
    durations: tuple = (1.0, 2.0)  # maneuver duration grid, s
    lane_keep_offsets: tuple = (-0.5, 0.0, 0.5)  # m, relative to the line
    lane_change_offsets: tuple = ()  # m, adjacent-lane targets
    terminal_speeds: tuple = (3.0, 5.0, 8.0)  # m/s
    maneuver_pieces: dict = field(default_factory=lambda: {"lane_keep": 3, "lane_change": 2})
    max_samples: int = 512
    horizon_steps: int = 20
    dt: float = 0.1

    def __post_init__(self):
        if not self.durations or not self.terminal_speeds:
            raise ValueError("duration and speed grids must be non-empty")
        if self.max_samples < 1:
            raise ValueError("max_samples must be >= 1")


def with_speeds_around(cfg: SamplerConfig, speed: float, deltas=(-2.0, 0.0, 2.0)) -> SamplerConfig:
    """Config whose terminal-speed grid brackets the given current speed."""
    speeds = tuple(sorted({max(0.0, speed + d) for d in deltas}))
    return SamplerConfig(
        durations=cfg.durations,
        lane_keep_offsets=cfg.lane_keep_offsets,
        lane_change_offsets=cfg.lane_change_offsets,
        terminal_speeds=speeds,
        maneuver_pieces=dict(cfg.maneuver_pieces),
        max_samples=cfg.max_samples,
        horizon_steps=cfg.horizon_steps,
        dt=cfg.dt,
    )


def _split_master(p_x: np.ndarray, p_y: np.ndarray, duration: float, n_pieces: int):
    """Split master profiles into boundary-condition-fit pieces at equal knots.

    Each segment of a quartic/quintic is the unique polynomial matching its
    endpoint conditions, so the split reproduces the master exactly.
    """
    knots = np.linspace(0.0, duration, n_pieces + 1)
    pieces = []
    for k in range(n_pieces):
        t0, t1 = knots[k], knots[k + 1]
        span = t1 - t0
        sx = [poly_eval(p_x, np.array([t0]), o)[0] for o in range(3)]
        ex = [poly_eval(p_x, np.array([t1]), o)[0] for o in (1, 2)]
        sy = [poly_eval(p_y, np.array([t0]), o)[0] for o in range(3)]
        ey = [poly_eval(p_y, np.array([t1]), o)[0] for o in range(3)]
        pieces.append(
            PolyPiece(
                duration=span,
                p_x=fit_longitudinal_piece(sx, ex, span),
                p_y=fit_lateral_piece(sy, ey, span),
            )
        )
    return pieces


def build_maneuver(start_x, start_y, offset: float, speed: float, duration: float,
                   n_pieces: int, horizon_s: float, frame: str = "", label: str = "") -> PiecewisePolyTrajectory:
    """Piecewise trajectory reaching (offset, speed) over `duration`, held to horizon."""
    p_x = fit_longitudinal_piece(start_x, (speed, 0.0), duration)
    p_y = fit_lateral_piece(start_y, (offset, 0.0, 0.0), duration)
    pieces = _split_master(p_x, p_y, duration, n_pieces)
    if horizon_s > duration + 1e-9:
        tail = horizon_s - duration
        x_end = poly_eval(p_x, np.array([duration]))[0]
        pieces.append(
            PolyPiece(
                duration=tail,
                p_x=fit_longitudinal_piece((x_end, speed, 0.0), (speed, 0.0), tail),
                p_y=fit_lateral_piece((offset, 0.0, 0.0), (offset, 0.0, 0.0), tail),
            )
        )
    return PiecewisePolyTrajectory(pieces=tuple(pieces), frame=frame, label=label)


def _has_backward_motion(traj: PiecewisePolyTrajectory, horizon_s: float) -> bool:
    t = np.arange(0.0, horizon_s + 1e-9, 0.025)
    xd, _ = traj.eval(t, order=1)
    return bool(np.any(xd < -1e-9))


def sample_trajectories(ego: BicycleState, line: ReferenceLine, cfg: SamplerConfig) -> list:
    """Grid-product Frenet trajectories starting C1-continuously at the ego state."""
    pose = project_to_frenet(ego.position, line)
    rel_heading = wrap_angle(ego.heading - float(line.heading_at(pose.s)))
    start_x = (pose.s, ego.speed * np.cos(rel_heading), 0.0)
    start_y = (pose.l, ego.speed * np.sin(rel_heading), 0.0)
    horizon_s = cfg.horizon_steps * cfg.dt

    grids = []
    for maneuver, offsets in (
        ("lane_keep", cfg.lane_keep_offsets),
        ("lane_change", cfg.lane_change_offsets),
    ):
        n_pieces = cfg.maneuver_pieces.get(maneuver, 0)
        if n_pieces < 1:
            continue
        for duration in cfg.durations:
            for offset in offsets:
                for speed in cfg.terminal_speeds:
                    grids.append((maneuver, duration, offset, speed, n_pieces))

    out = []
    for maneuver, duration, offset, speed, n_pieces in grids:
        traj = build_maneuver(
            start_x, start_y, offset, speed, duration, n_pieces, horizon_s,
            frame=cfg_frame_id(line), label=f"{maneuver}:d{duration}:l{offset}:v{speed}",
        )
        if _has_backward_motion(traj, horizon_s):
            continue
        out.append(traj)
        if len(out) >= cfg.max_samples:
            break
    if not out:
        raise SamplerError("all samples filtered out; widen the sampler grids")
    return out


def cfg_frame_id(line: ReferenceLine) -> str:
    return f"line@{id(line):x}"


def sample_actions(ego: BicycleState, line: ReferenceLine, cfg: SamplerConfig) -> list:
    """Cartesian (horizon_steps, 2) actions for the sampled trajectories."""
    return [
        t.cartesian_action(line, cfg.horizon_steps, cfg.dt)
        for t in sample_trajectories(ego, line, cfg)
    ]
