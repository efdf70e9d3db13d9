"""Model-driven post-optimization of policy actions.

Pipeline: candidate proposals (the policy action plus sampler candidates) are
rolled out closed-loop and rule-scored; the winner's path and speed profiles
are refined by smoothing-spline QPs under corridor / speed / lead-gap
constraints; any failure falls back to the lane centerline and an IDM speed
profile. The refined action always has the full plan horizon.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import BicycleState, rollout_tracking
from .frenet import ReferenceLine, frenet_arrays_to_cartesian, project_points_approx, project_to_frenet
from .geometry import footprint_corners, obb_overlap
from .idm import IDMParams, idm_accel, idm_speed_profile
from .qp import QPProblem, solve
from .sampler import SamplerConfig, SamplerError, sample_actions, with_speeds_around

GAUSS_NODES = np.array([-0.906179845938664, -0.538469310105683, 0.0,
                        0.538469310105683, 0.906179845938664])
GAUSS_WEIGHTS = np.array([0.236926885056189, 0.478628670499366, 0.568888888888889,
                          0.478628670499366, 0.236926885056189])

DEGREE = 5  # smoothing-spline piece degree
NCOEF = DEGREE + 1


@dataclass(frozen=True)
class SplineProfile:
    """Piecewise degree-5 polynomial y(x) over knots; coefficients per piece in
    the local variable x - x_i."""

    knots: np.ndarray
    coeffs: np.ndarray  # [n_pieces, 6]

    def eval(self, x, order: int = 0):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        x = np.clip(x, self.knots[0], self.knots[-1])
        idx = np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, len(self.coeffs) - 1)
        u = x - self.knots[idx]
        out = np.zeros_like(x)
        for i in range(len(self.coeffs)):
            m = idx == i
            if np.any(m):
                c = self.coeffs[i]
                for _ in range(order):
                    c = c[1:] * np.arange(1, len(c))
                val = np.zeros_like(u[m])
                for ck in c[::-1]:
                    val = val * u[m] + ck
                out[m] = val
        return out

    def continuity_residual(self) -> float:
        worst = 0.0
        for i in range(len(self.coeffs) - 1):
            span = self.knots[i + 1] - self.knots[i]
            for order in range(3):
                left = SplineProfile(self.knots[i : i + 2], self.coeffs[i : i + 1]).eval(
                    np.array([self.knots[i] + span]), order
                )[0]
                right = SplineProfile(self.knots[i + 1 : i + 3], self.coeffs[i + 1 : i + 2]).eval(
                    np.array([self.knots[i + 1]]), order
                )[0]
                worst = max(worst, abs(left - right))
        return worst


@dataclass
class RuleScore:
    collision_free: bool
    drivable: bool
    progress: float
    max_accel: float
    max_jerk: float
    composite: float


@dataclass
class RefineInfo:
    proposal_label: str = ""
    proposal_index: int = -1
    all_collided: bool = False
    path_fallback: bool = False
    speed_fallback: bool = False
    path_status: str = ""
    speed_status: str = ""


class _SplineQP:
    """Assembles H, f, and constraint rows for one spline profile."""

    def __init__(self, knots: np.ndarray):
        self.knots = np.asarray(knots, dtype=float)
        self.n = len(self.knots) - 1
        if self.n < 1 or np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing with >= 1 piece")
        dim = self.n * NCOEF
        self.H = np.zeros((dim, dim))
        self.f = np.zeros(dim)
        self.eq_rows: list = []
        self.eq_vals: list = []
        self.in_rows: list = []
        self.in_vals: list = []

    def _basis(self, x: float, order: int) -> np.ndarray:
        i = int(np.clip(np.searchsorted(self.knots, x, side="right") - 1, 0, self.n - 1))
        u = x - self.knots[i]
        row = np.zeros(self.n * NCOEF)
        for a in range(order, NCOEF):
            fac = math.factorial(a) / math.factorial(a - order)
            row[i * NCOEF + a] = fac * u ** (a - order)
        return row

    def add_derivative_energy(self, order: int, weight: float) -> None:
        """weight * integral (y^(order))^2 via exact per-piece Gram matrices."""
        if weight == 0.0:
            return
        for i in range(self.n):
            span = self.knots[i + 1] - self.knots[i]
            G = np.zeros((NCOEF, NCOEF))
            for a in range(order, NCOEF):
                fa = math.factorial(a) / math.factorial(a - order)
                for b in range(order, NCOEF):
                    fb = math.factorial(b) / math.factorial(b - order)
                    power = a + b - 2 * order + 1
                    G[a, b] = fa * fb * span**power / power
            block = slice(i * NCOEF, (i + 1) * NCOEF)
            self.H[block, block] += 2.0 * weight * G

    def add_tracking(self, target_fn, weight: float) -> None:
        """weight * integral (y - target)^2 by 5-point Gauss-Legendre per piece."""
        if weight == 0.0:
            return
        for i in range(self.n):
            lo, hi = self.knots[i], self.knots[i + 1]
            half = 0.5 * (hi - lo)
            mid = 0.5 * (hi + lo)
            for node, gw in zip(GAUSS_NODES, GAUSS_WEIGHTS):
                x = mid + half * node
                phi = self._basis(x, 0)
                w = weight * gw * half
                self.H += 2.0 * w * np.outer(phi, phi)
                self.f += -2.0 * w * float(target_fn(x)) * phi

    def add_continuity(self, max_order: int = 2) -> None:
        for i in range(self.n - 1):
            x = self.knots[i + 1]
            for order in range(max_order + 1):
                left = self._basis(x - 1e-12, order)
                right = self._basis(x + 1e-12, order)
                self.eq_rows.append(left - right)
                self.eq_vals.append(0.0)

    def add_point_equality(self, x: float, order: int, value: float) -> None:
        self.eq_rows.append(self._basis(x, order))
        self.eq_vals.append(value)

    def add_upper_bound(self, x: float, order: int, bound: float) -> None:
        self.in_rows.append(self._basis(x, order))
        self.in_vals.append(bound)

    def add_lower_bound(self, x: float, order: int, bound: float) -> None:
        self.in_rows.append(-self._basis(x, order))
        self.in_vals.append(-bound)

    def solve(self):
        problem = QPProblem(
            H=0.5 * (self.H + self.H.T),
            f=self.f,
            A_eq=np.array(self.eq_rows) if self.eq_rows else None,
            b_eq=np.array(self.eq_vals) if self.eq_vals else None,
            A_in=np.array(self.in_rows) if self.in_rows else None,
            b_in=np.array(self.in_vals) if self.in_vals else None,
        )
        sol = solve(problem)
        if sol.status != "optimal":
            return None, sol.status
        coeffs = sol.x.reshape(self.n, NCOEF)
        return SplineProfile(knots=self.knots, coeffs=coeffs), sol.status


def _spline_knots(lo: float, hi: float, spacing: float) -> np.ndarray:
    n = max(int(np.ceil((hi - lo) / spacing)), 1)
    return np.linspace(lo, hi, n + 1)


def qp_path_plan(target_fn, s_span, start, corridor, weights=(1.0, 0.1, 1.0, 1.0),
                 knot_spacing: float = 5.0):
    """Smoothing-spline lateral profile l(s).

    target_fn: s -> proposal lateral offset. corridor: (stations, lower, upper)
    arrays. start: (l0, dl0/ds) initial equality conditions. Returns
    (SplineProfile | None, status).
    """
    stations, lower, upper = corridor
    if np.any(lower > upper):
        return None, "infeasible"
    qp = _SplineQP(_spline_knots(s_span[0], s_span[1], knot_spacing))
    qp.add_tracking(target_fn, weights[0])
    qp.add_derivative_energy(1, weights[1])
    qp.add_derivative_energy(2, weights[2])
    qp.add_derivative_energy(3, weights[3])
    qp.add_continuity(2)
    qp.add_point_equality(s_span[0], 0, start[0])
    qp.add_point_equality(s_span[0], 1, start[1])
    for s, lo, hi in zip(stations, lower, upper):
        qp.add_upper_bound(s, 0, hi)
        qp.add_lower_bound(s, 0, lo)
    return qp.solve()


def qp_speed_plan(target_fn, horizon_s: float, start, v_max: float, a_bound: float,
                  lead_cap=None, weights=(1.0, 1.0, 1.0), knot_spacing: float = 0.5,
                  station_dt: float = 0.2):
    """Smoothing-spline station profile x(t); the low-speed J_1 term is absent.

    lead_cap: optional (times, caps) upper bounds on x(t) from predicted lead
    positions. start: (x0, v0). Monotonicity x'(t) >= 0 is enforced at the
    constraint stations.
    """
    qp = _SplineQP(_spline_knots(0.0, horizon_s, knot_spacing))
    qp.add_tracking(target_fn, weights[0])
    qp.add_derivative_energy(2, weights[1])
    qp.add_derivative_energy(3, weights[2])
    qp.add_continuity(2)
    qp.add_point_equality(0.0, 0, start[0])
    qp.add_point_equality(0.0, 1, start[1])
    for t in np.arange(station_dt, horizon_s + 1e-9, station_dt):
        qp.add_lower_bound(t, 1, 0.0)
        qp.add_upper_bound(t, 1, v_max)
        qp.add_upper_bound(t, 2, a_bound)
        qp.add_lower_bound(t, 2, -a_bound)
    if lead_cap is not None:
        for t, cap in zip(*lead_cap):
            qp.add_upper_bound(float(t), 0, float(cap))
    return qp.solve()


# -- proposals and rule scoring ------------------------------------------------


@dataclass
class Prediction:
    """Predicted positions [T_p, 2] (+ heading) and footprint of one agent."""

    positions: np.ndarray
    headings: np.ndarray
    length: float
    width: float


def constant_velocity_predictions(window, plan_steps: int, dt: float = 0.1) -> list:
    """Extrapolate every non-ego agent at its current velocity."""
    out = []
    states = window.current_states
    for i in range(1, states.shape[0]):
        pos = states[i, :2]
        vel = states[i, 3:5]
        t = dt * np.arange(1, plan_steps + 1)
        out.append(Prediction(
            positions=pos[None, :] + t[:, None] * vel[None, :],
            headings=np.full(plan_steps, states[i, 2]),
            length=4.6, width=1.9,
        ))
    return out


@dataclass(frozen=True)
class PostOptimizerConfig:
    horizon_steps: int = 20
    dt: float = 0.1
    max_candidates: int = 48  # paper-scale cap is 1500
    preference_weight: float = 0.05
    path_weights: tuple = (1.0, 0.1, 1.0, 1.0)
    speed_weights: tuple = (1.0, 1.0, 1.0)
    lane_width: float = 3.5
    ego_length: float = 4.6
    ego_width: float = 1.9
    margin: float = 0.3
    comfort_accel: float = 3.0
    comfort_jerk: float = 5.0
    accel_bound: float = 3.5
    station_spacing: float = 2.0
    idm: IDMParams = field(default_factory=IDMParams)


def _rollout_states(state: BicycleState, action: np.ndarray, dt: float) -> np.ndarray:
    states = rollout_tracking(state, action, n_steps=action.shape[0], dt=dt)
    return np.array([[s.x, s.y, s.heading, s.speed] for s in states])


def _collision_along(states: np.ndarray, predictions: list, cfg: PostOptimizerConfig) -> bool:
    for j in range(1, states.shape[0]):
        ego = footprint_corners(states[j, :2], states[j, 2], cfg.ego_length, cfg.ego_width)
        for pred in predictions:
            k = min(j - 1, pred.positions.shape[0] - 1)
            other = footprint_corners(pred.positions[k], pred.headings[k],
                                      pred.length + cfg.margin, pred.width + cfg.margin)
            if obb_overlap(ego, other):
                return True
    return False


def _lane_center_offsets(scenario, line: ReferenceLine) -> np.ndarray:
    """Lateral offsets of all lane centerlines w.r.t. the reference line."""
    offsets = []
    for lane in scenario.lanes():
        _, l, dist = project_points_approx(lane.xy, line)
        near = dist < 25.0
        if np.count_nonzero(near) >= 3:
            offsets.append(float(np.median(l[near])))
    return np.array(sorted(set(np.round(offsets, 2)))) if offsets else np.array([0.0])


def drivable_bounds(scenario, line: ReferenceLine, stations: np.ndarray,
                    cfg: PostOptimizerConfig):
    """Lateral free-space bounds at each station from the lane corridors."""
    centers = _lane_center_offsets(scenario, line)
    half = cfg.lane_width / 2.0 - cfg.ego_width / 2.0 - cfg.margin
    lower = np.full(stations.shape, centers.min() - half)
    upper = np.full(stations.shape, centers.max() + half)
    return lower, upper


def _within_drivable(states: np.ndarray, scenario, line: ReferenceLine,
                     cfg: PostOptimizerConfig) -> bool:
    s, l, dist = project_points_approx(states[1:, :2], line)
    centers = _lane_center_offsets(scenario, line)
    half = cfg.lane_width / 2.0
    ok = np.zeros(len(l), dtype=bool)
    for c in centers:
        ok |= np.abs(l - c) <= half
    return bool(np.all(ok))


def score_rollout(states: np.ndarray, action: np.ndarray, candidate: np.ndarray,
                  predictions: list, scenario, line: ReferenceLine,
                  cfg: PostOptimizerConfig, progress_scale: float) -> tuple:
    """RuleScore plus the preference-adjusted final score for one candidate."""
    dt = cfg.dt
    speeds = states[:, 3]
    accel = np.diff(speeds) / dt
    jerk = np.diff(accel) / dt if len(accel) > 1 else np.zeros(1)
    max_a = float(np.max(np.abs(accel))) if len(accel) else 0.0
    max_j = float(np.max(np.abs(jerk))) if len(jerk) else 0.0
    collision_free = not _collision_along(states, predictions, cfg)
    drivable = _within_drivable(states, scenario, line, cfg)
    s_pts, _, _ = project_points_approx(states[[0, -1], :2], line)
    progress = float(s_pts[1] - s_pts[0])
    progress_norm = float(np.clip(progress / max(progress_scale, 1e-6), 0.0, 1.0))
    comfort_a = float(np.clip(1.0 - max(0.0, max_a - cfg.comfort_accel) / cfg.comfort_accel, 0.0, 1.0))
    comfort_j = float(np.clip(1.0 - max(0.0, max_j - cfg.comfort_jerk) / cfg.comfort_jerk, 0.0, 1.0))
    composite = (
        float(collision_free) * float(drivable)
        * (0.5 * progress_norm + 0.3 * comfort_a + 0.2 * comfort_j)
    )
    score = RuleScore(collision_free=collision_free, drivable=drivable, progress=progress,
                      max_accel=max_a, max_jerk=max_j, composite=composite)
    preference = -cfg.preference_weight * float(
        np.mean(np.linalg.norm(action - candidate, axis=1))
    )
    return score, composite + preference


def generate_and_score_proposals(action: np.ndarray, state: BicycleState, scenario,
                                 line: ReferenceLine, predictions: list,
                                 cfg: PostOptimizerConfig):
    """Best proposal by rule score + closeness preference; candidates include
    the policy action itself. Returns (candidate, rollout states, info)."""
    candidates = [np.asarray(action, dtype=float)]
    labels = ["policy"]
    try:
        scfg = with_speeds_around(
            SamplerConfig(
                durations=(1.0, 2.0),
                lane_keep_offsets=(-1.0, 0.0, 1.0),
                lane_change_offsets=(-cfg.lane_width, cfg.lane_width),
                terminal_speeds=(1.0,),
                max_samples=cfg.max_candidates,
                horizon_steps=cfg.horizon_steps,
                dt=cfg.dt,
            ),
            state.speed,
            deltas=(-3.0, -1.5, 0.0, 2.0),
        )
        sampled = sample_actions(state, line, scfg)
        candidates += sampled[: cfg.max_candidates - 1]
        labels += [f"sample{i}" for i in range(len(candidates) - 1)]
    except SamplerError:
        pass

    progress_scale = max(state.speed, 1.0) * cfg.horizon_steps * cfg.dt
    best_idx, best_score, best_states = -1, -np.inf, None
    any_collision_free = False
    for i, cand in enumerate(candidates):
        states = _rollout_states(state, cand, cfg.dt)
        rule, final = score_rollout(states, np.asarray(action), cand, predictions,
                                    scenario, line, cfg, progress_scale)
        any_collision_free = any_collision_free or rule.collision_free
        if final > best_score:
            best_idx, best_score, best_states = i, final, states
    info = RefineInfo(proposal_label=labels[best_idx], proposal_index=best_idx,
                      all_collided=not any_collision_free)
    return candidates[best_idx], best_states, info


def refine(action: np.ndarray, state: BicycleState, scenario, line: ReferenceLine,
           predictions: list, cfg: PostOptimizerConfig):
    """Full hybrid stage; returns (refined_action [T_p, 2], RefineInfo)."""
    action = np.asarray(action, dtype=float)
    Tp, dt = cfg.horizon_steps, cfg.dt
    horizon_s = Tp * dt
    pose = project_to_frenet(state.position, line)
    rel_h = state.heading - float(line.heading_at(pose.s))
    v0 = state.speed

    proposal, rollout, info = generate_and_score_proposals(
        action, state, scenario, line, predictions, cfg
    )
    if info.all_collided:
        info.path_fallback = True
        info.speed_fallback = True
        return _fallback_action(state, pose, line, scenario, predictions, cfg, info), info

    s_roll, l_roll, _ = project_points_approx(rollout[:, :2], line)
    t_axis = dt * np.arange(Tp + 1)

    # -- path profile l(s)
    s_lo, s_hi = float(s_roll[0]), float(max(s_roll[-1], s_roll[0] + 1.0))
    path_profile = None
    if s_hi - s_lo > 2.0:
        order = np.argsort(s_roll)
        s_sorted = s_roll[order]
        l_sorted = l_roll[order]
        target = lambda s: float(np.interp(s, s_sorted, l_sorted))
        stations = np.arange(s_lo, s_hi + 1e-9, cfg.station_spacing)
        lower, upper = drivable_bounds(scenario, line, stations, cfg)
        path_profile, info.path_status = qp_path_plan(
            target, (s_lo, s_hi), (float(l_roll[0]), math.tan(rel_h)),
            (stations, lower, upper), weights=cfg.path_weights,
        )
    if path_profile is None:
        info.path_fallback = True

    # -- speed profile x(t)
    target_x = lambda t: float(np.interp(t, t_axis, s_roll))
    v_max = min((p.speed_limit for p in scenario.route_polygons()), default=13.0)
    lead = _lead_cap(pose.s, predictions, line, cfg)
    speed_profile, info.speed_status = qp_speed_plan(
        target_x, horizon_s, (float(s_roll[0]), v0), v_max, cfg.accel_bound,
        lead_cap=lead, weights=cfg.speed_weights,
    )
    if speed_profile is None:
        info.speed_fallback = True

    t_pts = dt * np.arange(1, Tp + 1)
    if speed_profile is not None:
        s_pts = speed_profile.eval(t_pts)
    else:
        s_pts = pose.s + _idm_station_profile(state, pose, predictions, line, scenario, cfg)[1:]
    if path_profile is not None:
        l_pts = path_profile.eval(np.clip(s_pts, s_lo, s_hi))
    else:
        l_pts = np.zeros_like(s_pts)  # centerline fallback
    return frenet_arrays_to_cartesian(s_pts, l_pts, line), info


def _lead_cap(s0: float, predictions: list, line: ReferenceLine, cfg: PostOptimizerConfig):
    """Upper bounds on x(t) from predicted agents near the reference line ahead."""
    times, caps = [], []
    for pred in predictions:
        s, l, dist = project_points_approx(pred.positions, line)
        near = (np.abs(l) < cfg.lane_width / 2.0) & (s > s0)
        if not np.any(near):
            continue
        t = cfg.dt * (1 + np.arange(pred.positions.shape[0]))
        gap = cfg.ego_length / 2.0 + pred.length / 2.0 + cfg.idm.s0
        for ti, si, ni in zip(t, s, near):
            if ni:
                times.append(float(ti))
                caps.append(float(si - gap))
    if not times:
        return None
    return np.array(times), np.array(caps)


def _idm_station_profile(state: BicycleState, pose, predictions, line, scenario,
                         cfg: PostOptimizerConfig) -> np.ndarray:
    v_max = min((p.speed_limit for p in scenario.route_polygons()), default=13.0)
    params = IDMParams(v0=min(cfg.idm.v0, v_max), T=cfg.idm.T, s0=cfg.idm.s0,
                       a_max=cfg.idm.a_max, b=cfg.idm.b, delta=cfg.idm.delta)
    gap, v_lead = np.inf, 0.0
    for pred in predictions:
        s, l, _ = project_points_approx(pred.positions[:1], line)
        if abs(l[0]) < cfg.lane_width / 2.0 and s[0] > pose.s:
            candidate_gap = s[0] - pose.s - cfg.ego_length / 2.0 - pred.length / 2.0
            if candidate_gap < gap:
                gap = candidate_gap
                step_v = pred.positions[1] - pred.positions[0] if pred.positions.shape[0] > 1 else 0.0
                v_lead = float(np.linalg.norm(step_v) / cfg.dt) if np.ndim(step_v) else 0.0
    return idm_speed_profile(state.speed, gap, v_lead, params, cfg.horizon_steps, cfg.dt)


def _fallback_action(state, pose, line, scenario, predictions, cfg, info) -> np.ndarray:
    stations = _idm_station_profile(state, pose, predictions, line, scenario, cfg)
    s_pts = pose.s + stations[1:]
    return frenet_arrays_to_cartesian(s_pts, np.zeros_like(s_pts), line)
