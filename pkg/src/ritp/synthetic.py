"""Deterministic synthetic urban scenarios.

Each scenario lasts 15 s at 10 Hz on a small map built from lane-centerline
polygons. The logged ego track is a rule-generated feasible demonstration:
IDM longitudinal control on the route reference line plus a centerline (or
merge-profile) lateral term. Every scenario is placed under a random rigid
transform so nothing is axis-aligned by construction.

straight_follow seeds: odd seeds give a lead vehicle that brakes to a stop
mid-scenario, even seeds a steady lead.
"""
from __future__ import annotations

import numpy as np

from . import scene
from .frenet import ReferenceLine, frenet_arrays_to_cartesian
from .geometry import rotate_points, wrap_angle
from .idm import IDMParams, idm_accel

KINDS = ("straight_follow", "stop_at_intersection", "lane_change", "unprotected_turn")

DURATION_STEPS = 150
DT = 0.1
LANE_WIDTH = 3.5
SPEED_LIMIT = 13.0

_KIND_TAG = {k: i for i, k in enumerate(KINDS)}


def route_reference_line(scenario: scene.Scenario) -> ReferenceLine:
    """Concatenated route-lane centerline as a 1 m-resampled reference line."""
    pts = []
    for polygon in scenario.route_polygons():
        for p in polygon.xy:
            if pts and np.hypot(*(p - pts[-1])) < 1e-6:
                continue
            pts.append(p)
    return ReferenceLine(np.asarray(pts))


def _straight_points(start, heading, length, n):
    t = np.linspace(0.0, length, n)
    direction = np.array([np.cos(heading), np.sin(heading)])
    xy = np.asarray(start)[None, :] + t[:, None] * direction[None, :]
    return np.column_stack([xy, np.full(n, heading)])


def _arc_points(center, radius, angle0, angle1, n):
    ang = np.linspace(angle0, angle1, n)
    xy = np.asarray(center)[None, :] + radius * np.column_stack([np.cos(ang), np.sin(ang)])
    direction = ang + np.pi / 2 * np.sign(angle1 - angle0)
    return np.column_stack([xy, wrap_angle(direction)])


def _lane(pid, points, traffic_light="unknown"):
    return scene.MapPolygon(
        id=pid, points=points, semantic="lane", traffic_light=traffic_light,
        speed_limit=SPEED_LIMIT,
    )


def _track_from_profile(track_id, semantic, line, s, l, v_long, l_rate, footprint):
    """Build a track from Frenet profiles: position, path heading, velocity."""
    pos = frenet_arrays_to_cartesian(s, l, line)
    tangent_h = line.heading_at(s)
    normal = np.stack([-np.sin(tangent_h), np.cos(tangent_h)], axis=-1)
    tangent = np.stack([np.cos(tangent_h), np.sin(tangent_h)], axis=-1)
    vel = v_long[:, None] * tangent + l_rate[:, None] * normal
    speed = np.linalg.norm(vel, axis=1)
    heading = np.where(speed > 0.05, np.arctan2(vel[:, 1], vel[:, 0]), tangent_h)
    # hold the last moving heading through stopped stretches
    for i in range(1, len(heading)):
        if speed[i] <= 0.05:
            heading[i] = heading[i - 1]
    states = np.column_stack([pos, wrap_angle(heading), vel])
    return scene.AgentTrack(id=track_id, semantic=semantic, states=states,
                            length=footprint[0], width=footprint[1])


def _integrate_idm(v_init, params, n_steps, lead_s=None, lead_v=None, v0_by_s=None,
                   lead_until=None, s_init=0.0):
    """IDM longitudinal integration; optional moving/virtual lead and s-dependent v0.

    lead_s: callable step -> lead bumper-to-bumper reference station (np.inf = free).
    Returns (s, v) arrays of length n_steps.
    """
    s = np.empty(n_steps)
    v = np.empty(n_steps)
    cur_s, cur_v = s_init, max(v_init, 0.0)
    for k in range(n_steps):
        s[k], v[k] = cur_s, cur_v
        p = params if v0_by_s is None else IDMParams(
            v0=v0_by_s(cur_s), T=params.T, s0=params.s0, a_max=params.a_max,
            b=params.b, delta=params.delta,
        )
        if lead_s is not None and (lead_until is None or k < lead_until):
            gap = lead_s(k) - cur_s
            dv = cur_v - (lead_v(k) if lead_v is not None else 0.0)
            a = idm_accel(cur_v, dv, gap, p)
        else:
            a = idm_accel(cur_v, 0.0, np.inf, p)
        cur_v = max(cur_v + a * DT, 0.0)
        cur_s = cur_s + cur_v * DT
    return s, v


def _min_jerk(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return 10 * tau**3 - 15 * tau**4 + 6 * tau**5


def _min_jerk_rate(tau, span, duration):
    tau = np.clip(tau, 0.0, 1.0)
    return span / duration * (30 * tau**2 - 60 * tau**3 + 30 * tau**4)


def _apply_rigid_transform(polygons, tracks, angle, shift):
    out_p = []
    for p in polygons:
        xy = rotate_points(p.xy, angle) + shift
        pts = np.column_stack([xy, wrap_angle(p.points[:, 2] + angle)])
        out_p.append(scene.MapPolygon(p.id, pts, p.semantic, p.traffic_light, p.speed_limit))
    out_t = []
    for t in tracks:
        pos = rotate_points(t.positions, angle) + shift
        vel = rotate_points(t.velocities, angle)
        states = np.column_stack([pos, wrap_angle(t.headings + angle), vel])
        out_t.append(scene.AgentTrack(t.id, t.semantic, states, t.length, t.width))
    return out_p, out_t


def transform_scenario(scenario: scene.Scenario, angle: float, shift) -> scene.Scenario:
    """Rigidly transformed copy of a scenario (rotation about the origin, then shift)."""
    shift = np.asarray(shift, dtype=float)
    polygons, tracks = _apply_rigid_transform(
        list(scenario.map_polygons), [scenario.ego_track, *scenario.agent_tracks], angle, shift
    )
    return scene.Scenario(
        id=scenario.id,
        duration_steps=scenario.duration_steps,
        map_polygons=tuple(polygons),
        agent_tracks=tuple(tracks[1:]),
        ego_track=tracks[0],
        route_lane_ids=scenario.route_lane_ids,
    )


def _three_lane_road(length):
    lanes = []
    for i, off in enumerate((-LANE_WIDTH, 0.0, LANE_WIDTH)):
        pts = _straight_points((0.0, off), 0.0, length, 20)
        lanes.append(_lane(f"lane_{i}", pts))
    return lanes  # lanes[1] is the center (route) lane


def generate_synthetic_scenario(kind: str, seed: int, duration_steps: int = DURATION_STEPS) -> scene.Scenario:
    """Deterministic scenario of the given kind; see module docstring."""
    if kind not in KINDS:
        raise ValueError(f"unknown scenario kind {kind!r}; choose from {KINDS}")
    rng = np.random.default_rng([_KIND_TAG[kind], seed])
    n = duration_steps
    params = IDMParams(v0=9.5 + rng.uniform(-0.5, 0.5))
    ego_footprint = (4.6, 1.9)
    car_footprint = (4.6, 1.9)
    ego_half = ego_footprint[0] / 2.0
    car_half = car_footprint[0] / 2.0

    if kind == "straight_follow":
        lanes = _three_lane_road(260.0)
        line = ReferenceLine(lanes[1].xy)
        lead_v0 = 5.5 + rng.uniform(0.0, 1.5)
        lead_s0 = 45.0 + rng.uniform(0.0, 10.0)
        lead_v = np.full(n, lead_v0)
        if seed % 2 == 1:  # braking lead
            t_brake = 5.0 + rng.uniform(0.0, 1.0)
            k0 = int(t_brake / DT)
            for k in range(k0, n):
                lead_v[k] = max(lead_v[k - 1] - 2.5 * DT, 0.0)
        lead_s = lead_s0 + np.concatenate([[0.0], np.cumsum(lead_v[1:] * DT)])
        ego_s, ego_v = _integrate_idm(
            6.0 + rng.uniform(0.0, 1.5), params, n,
            lead_s=lambda k: lead_s[k] - car_half - ego_half,
            lead_v=lambda k: lead_v[k],
            s_init=18.0 + rng.uniform(0.0, 4.0),
        )
        zeros = np.zeros(n)
        ego = _track_from_profile("ego", "ego", line, ego_s, zeros, ego_v, zeros, ego_footprint)
        lead = _track_from_profile("lead", "vehicle", line, lead_s, zeros, lead_v, zeros, car_footprint)
        side_line = ReferenceLine(lanes[2].xy)
        side_v = np.full(n, 7.0 + rng.uniform(-1.0, 1.0))
        side_s = 30.0 + np.cumsum(side_v * DT) - side_v[0] * DT
        side = _track_from_profile("side", "vehicle", side_line, side_s, zeros, side_v, zeros, car_footprint)
        polygons, tracks = lanes, [lead, side]
        route = ("lane_1",)

    elif kind == "stop_at_intersection":
        lanes = _three_lane_road(200.0)
        s_stop = 55.0 + rng.uniform(0.0, 10.0)
        lanes = [
            scene.MapPolygon(p.id, p.points, "lane", "red" if p.id == "lane_1" else "unknown",
                             SPEED_LIMIT)
            for p in lanes
        ]
        stop_pts = _straight_points((s_stop, -LANE_WIDTH / 2), np.pi / 2, LANE_WIDTH, 20)
        stop_line = scene.MapPolygon("stop_0", stop_pts, "stop_line", "unknown", SPEED_LIMIT)
        cross_pts = _straight_points((s_stop + 8.0, -40.0), np.pi / 2, 80.0, 20)
        cross_lane = _lane("lane_cross", cross_pts)
        line = ReferenceLine(lanes[1].xy)
        ego_s, ego_v = _integrate_idm(
            6.5 + rng.uniform(0.0, 1.0), params, n,
            lead_s=lambda k: s_stop - ego_half,  # virtual stationary lead at the line
            s_init=12.0 + rng.uniform(0.0, 4.0),
        )
        zeros = np.zeros(n)
        ego = _track_from_profile("ego", "ego", line, ego_s, zeros, ego_v, zeros, ego_footprint)
        cross_line = ReferenceLine(cross_pts[:, :2])
        cross_v = np.full(n, 6.0 + rng.uniform(-1.0, 1.0))
        cross_s = 10.0 + np.cumsum(cross_v * DT) - cross_v[0] * DT
        crossing = _track_from_profile("crossing", "vehicle", cross_line, cross_s, zeros,
                                       cross_v, zeros, car_footprint)
        polygons = lanes + [stop_line, cross_lane]
        tracks = [crossing]
        route = ("lane_1",)

    elif kind == "lane_change":
        lanes = _three_lane_road(260.0)
        # route is the left lane; ego starts one lane right of it behind a slow lead
        line = ReferenceLine(lanes[2].xy)
        slow_v = np.full(n, 2.5 + rng.uniform(0.0, 1.0))
        slow_s0 = 40.0 + rng.uniform(0.0, 6.0)
        slow_s = slow_s0 + np.cumsum(slow_v * DT) - slow_v[0] * DT
        t_start = 3.5 + rng.uniform(0.0, 1.0)
        t_span = 3.0
        k_free = int((t_start + t_span / 2) / DT)  # stop following once across the boundary
        ego_s, ego_v = _integrate_idm(
            6.0 + rng.uniform(0.0, 1.0), params, n,
            lead_s=lambda k: slow_s[k] - car_half - ego_half,
            lead_v=lambda k: slow_v[k],
            lead_until=k_free,
            s_init=16.0 + rng.uniform(0.0, 4.0),
        )
        t = np.arange(n) * DT
        tau = (t - t_start) / t_span
        l = -LANE_WIDTH + LANE_WIDTH * _min_jerk(tau)
        l_rate = _min_jerk_rate(tau, LANE_WIDTH, t_span)
        ego = _track_from_profile("ego", "ego", line, ego_s, l, ego_v, l_rate, ego_footprint)
        zeros = np.zeros(n)
        mid_line = ReferenceLine(lanes[1].xy)
        slow = _track_from_profile("slow", "vehicle", mid_line, slow_s, zeros, slow_v, zeros,
                                   car_footprint)
        polygons, tracks = lanes, [slow]
        route = ("lane_2",)

    else:  # unprotected_turn
        radius = 8.0
        approach = _straight_points((0.0, 0.0), 0.0, 60.0, 20)
        curve = _arc_points((60.0, radius), radius, -np.pi / 2, 0.0, 20)
        exit_pts = _straight_points((60.0 + radius, radius), np.pi / 2, 60.0, 20)
        oncoming_pts = _straight_points((150.0, LANE_WIDTH), np.pi, 150.0, 20)
        crosswalk = _straight_points((60.0 + radius - LANE_WIDTH / 2, radius + 6.0), 0.0,
                                     LANE_WIDTH, 20)
        polygons = [
            _lane("lane_in", approach),
            _lane("lane_curve", curve),
            _lane("lane_out", exit_pts),
            _lane("lane_oncoming", oncoming_pts),
            scene.MapPolygon("crosswalk_0", crosswalk, "crosswalk"),
        ]
        route = ("lane_in", "lane_curve", "lane_out")
        line = ReferenceLine(np.vstack([approach[:, :2], curve[1:, :2], exit_pts[1:, :2]]))
        onc_line = ReferenceLine(oncoming_pts[:, :2])
        onc_v = np.full(n, 6.5 + rng.uniform(0.0, 1.5))
        onc_start = 52.0 + rng.uniform(0.0, 8.0)  # distance along its own lane
        onc_s = onc_start + np.cumsum(onc_v * DT) - onc_v[0] * DT
        # oncoming x position = 150 - onc_s; it clears the turn area once x < 58
        clear_k = int(np.argmax(150.0 - onc_s < 58.0))
        if 150.0 - onc_s[-1] >= 58.0:
            clear_k = n
        s_yield = 52.0
        curve_lo, curve_hi = 58.0, 62.0 + radius * np.pi / 2

        def v0_by_s(s):
            return 4.5 if curve_lo <= s <= curve_hi else params.v0

        ego_s, ego_v = _integrate_idm(
            5.5 + rng.uniform(0.0, 1.0), params, n,
            lead_s=lambda k: s_yield - ego_half,
            lead_until=clear_k,
            v0_by_s=v0_by_s,
            s_init=10.0 + rng.uniform(0.0, 4.0),
        )
        zeros = np.zeros(n)
        ego = _track_from_profile("ego", "ego", line, ego_s, zeros, ego_v, zeros, ego_footprint)
        oncoming = _track_from_profile("oncoming", "vehicle", onc_line, onc_s, zeros, onc_v,
                                       zeros, car_footprint)
        tracks = [oncoming]

    angle = float(rng.uniform(0.0, 2.0 * np.pi))
    shift = rng.uniform(-80.0, 80.0, size=2)
    polygons, all_tracks = _apply_rigid_transform(polygons, [ego] + tracks, angle, shift)
    ego_t, tracks = all_tracks[0], all_tracks[1:]
    return scene.Scenario(
        id=f"{kind}-{seed:04d}",
        duration_steps=n,
        map_polygons=tuple(polygons),
        agent_tracks=tuple(tracks),
        ego_track=ego_t,
        route_lane_ids=route,
    )
