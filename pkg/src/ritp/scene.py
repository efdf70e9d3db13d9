"""Scenario data model, query-centric descriptors, and relative positional encodings.

Coordinates are meters in a global frame, headings radians, and every track is
sampled at 10 Hz. All descriptor outputs depend on the scene only through
distances and relative angles, which is what makes them invariant under rigid
motions of the whole scenario.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import heading_vector, signed_angle_between, wrap_angle

DT = 0.1  # simulation step, seconds

SEMANTIC_POLYGON = ("lane", "stop_line", "crosswalk")
TRAFFIC_LIGHT = ("green", "red", "unknown")
AGENT_TYPES = ("vehicle", "pedestrian", "cyclist", "ego")


class ScenarioFormatError(ValueError):
    """Raised when a scenario file violates the schema; carries the field path."""

    def __init__(self, path: str, message: str):
        self.field_path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class MapPolygon:
    id: str
    # points: (P, 3) array of (x, y, orientation)
    points: np.ndarray
    semantic: str
    traffic_light: str = "unknown"
    speed_limit: float = 15.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"polygon {self.id}: points must be (P, 3)")
        if self.semantic not in SEMANTIC_POLYGON:
            raise ValueError(f"polygon {self.id}: unknown semantic {self.semantic!r}")
        if self.traffic_light not in TRAFFIC_LIGHT:
            raise ValueError(f"polygon {self.id}: unknown traffic light {self.traffic_light!r}")
        seg = np.linalg.norm(np.diff(pts[:, :2], axis=0), axis=1)
        if np.any(seg == 0.0):
            raise ValueError(f"polygon {self.id}: consecutive points coincide")

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]


@dataclass(frozen=True)
class AgentTrack:
    id: str
    semantic: str
    # states: (steps, 5) array of (x, y, heading, vx, vy)
    states: np.ndarray
    length: float = 4.6
    width: float = 1.9

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "states", states)
        if states.ndim != 2 or states.shape[1] != 5:
            raise ValueError(f"track {self.id}: states must be (steps, 5)")
        if not np.all(np.isfinite(states)):
            raise ValueError(f"track {self.id}: non-finite state values")
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"track {self.id}: footprint must be positive")
        if self.semantic not in AGENT_TYPES:
            raise ValueError(f"track {self.id}: unknown semantic {self.semantic!r}")

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    @property
    def headings(self) -> np.ndarray:
        return self.states[:, 2]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, 3:5]

    def speed(self, step: int) -> float:
        return float(np.hypot(self.states[step, 3], self.states[step, 4]))


@dataclass(frozen=True)
class Scenario:
    id: str
    duration_steps: int
    map_polygons: tuple
    agent_tracks: tuple
    ego_track: AgentTrack
    route_lane_ids: tuple

    def __post_init__(self):
        object.__setattr__(self, "map_polygons", tuple(self.map_polygons))
        object.__setattr__(self, "agent_tracks", tuple(self.agent_tracks))
        object.__setattr__(self, "route_lane_ids", tuple(self.route_lane_ids))
        known = {p.id for p in self.map_polygons}
        for rid in self.route_lane_ids:
            if rid not in known:
                raise ValueError(f"scenario {self.id}: route id {rid!r} references no polygon")
        for track in (self.ego_track, *self.agent_tracks):
            if track.states.shape[0] != self.duration_steps:
                raise ValueError(
                    f"scenario {self.id}: track {track.id} has {track.states.shape[0]} states, "
                    f"expected {self.duration_steps}"
                )

    def validate_horizon(self, min_duration_steps: int) -> None:
        if self.duration_steps < min_duration_steps:
            raise ValueError(
                f"scenario {self.id}: duration_steps {self.duration_steps} < required "
                f"{min_duration_steps} (history + plan horizon)"
            )

    def polygon(self, polygon_id: str) -> MapPolygon:
        for p in self.map_polygons:
            if p.id == polygon_id:
                return p
        raise KeyError(polygon_id)

    def route_polygons(self) -> list:
        return [self.polygon(pid) for pid in self.route_lane_ids]

    def lanes(self) -> list:
        return [p for p in self.map_polygons if p.semantic == "lane"]


@dataclass(frozen=True)
class AgentDescriptor:
    step_length: float
    motion_heading_angle: float
    speed: float
    velocity_heading_angle: float
    semantic: str

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.step_length, self.motion_heading_angle, self.speed, self.velocity_heading_angle]
        )


@dataclass(frozen=True)
class MapPointDescriptor:
    segment_length: float
    semantic: str
    traffic_light: str


@dataclass(frozen=True)
class RelPosEncoding:
    distance: float
    bearing_minus_heading: float
    heading_diff: float
    time_gap: int

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.distance, self.bearing_minus_heading, self.heading_diff, float(self.time_gap)]
        )


def agent_descriptor(track: AgentTrack, step: int) -> AgentDescriptor:
    """Local-frame descriptor of one agent state: motion step, angles, speed.

    At step 0 no predecessor exists, so step_length and motion_heading_angle
    fall back to 0.
    """
    state = track.states[step]
    h = heading_vector(state[2])
    v = state[3:5]
    speed = float(np.hypot(v[0], v[1]))
    vel_angle = signed_angle_between(h, v) if speed > 0.0 else 0.0
    if step == 0:
        return AgentDescriptor(0.0, 0.0, speed, vel_angle, track.semantic)
    disp = track.positions[step] - track.positions[step - 1]
    step_length = float(np.hypot(disp[0], disp[1]))
    motion_angle = signed_angle_between(h, disp) if step_length > 0.0 else 0.0
    return AgentDescriptor(step_length, motion_angle, speed, vel_angle, track.semantic)


def map_point_descriptor(polygon: MapPolygon, index: int) -> MapPointDescriptor:
    """Per-point map descriptor; the first point has segment_length 0."""
    if index == 0:
        seg = 0.0
    else:
        d = polygon.xy[index] - polygon.xy[index - 1]
        seg = float(np.hypot(d[0], d[1]))
    return MapPointDescriptor(seg, polygon.semantic, polygon.traffic_light)


def rel_pos_encoding(pose_a, pose_b) -> RelPosEncoding:
    """Relative spatial-temporal encoding of pose_b as seen from pose_a.

    Each pose is (position (x, y), heading, step). For map elements pass equal
    steps; the time gap is then 0.
    """
    (pa, ha, ga) = pose_a
    (pb, hb, gb) = pose_b
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    delta = pb - pa
    dist = float(np.hypot(delta[0], delta[1]))
    if dist == 0.0:
        bearing = 0.0
    else:
        bearing = wrap_angle(np.arctan2(delta[1], delta[0]) - ha)
    return RelPosEncoding(dist, bearing, wrap_angle(hb - ha), int(gb) - int(ga))


def rel_pos_array(pos_a, head_a, step_a, pos_b, head_b, step_b) -> np.ndarray:
    """Vectorized rel_pos_encoding; broadcasts a over b, returns (..., 4)."""
    pos_a = np.asarray(pos_a, dtype=float)
    pos_b = np.asarray(pos_b, dtype=float)
    delta = pos_b - pos_a
    dist = np.hypot(delta[..., 0], delta[..., 1])
    bearing = np.where(dist == 0.0, 0.0, wrap_angle(np.arctan2(delta[..., 1], delta[..., 0]) - head_a))
    hdiff = wrap_angle(np.asarray(head_b, dtype=float) - head_a)
    gap = np.broadcast_to(np.asarray(step_b, dtype=float) - step_a, dist.shape)
    return np.stack([dist, bearing, hdiff, gap], axis=-1)


# ---------------------------------------------------------------------------
# JSON serialization


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "id": scenario.id,
        "duration_steps": scenario.duration_steps,
        "map_polygons": [
            {
                "id": p.id,
                "semantic": p.semantic,
                "traffic_light": p.traffic_light,
                "speed_limit": p.speed_limit,
                "points": p.points.tolist(),
            }
            for p in scenario.map_polygons
        ],
        "agent_tracks": [_track_to_dict(t) for t in scenario.agent_tracks],
        "ego_track": _track_to_dict(scenario.ego_track),
        "route_lane_ids": list(scenario.route_lane_ids),
    }


def _track_to_dict(track: AgentTrack) -> dict:
    return {
        "id": track.id,
        "semantic": track.semantic,
        "footprint": [track.length, track.width],
        "states": track.states.tolist(),
    }


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ScenarioFormatError(f"{path}.{key}" if path else key, "missing field")
    return obj[key]


def _track_from_dict(obj: dict, path: str) -> AgentTrack:
    if not isinstance(obj, dict):
        raise ScenarioFormatError(path, "expected an object")
    footprint = _require(obj, "footprint", path)
    states = _require(obj, "states", path)
    try:
        return AgentTrack(
            id=str(_require(obj, "id", path)),
            semantic=str(_require(obj, "semantic", path)),
            states=np.asarray(states, dtype=float),
            length=float(footprint[0]),
            width=float(footprint[1]),
        )
    except (ValueError, TypeError, IndexError) as exc:
        raise ScenarioFormatError(path, str(exc)) from exc


def scenario_from_dict(obj: dict) -> Scenario:
    if not isinstance(obj, dict):
        raise ScenarioFormatError("", "expected a JSON object")
    polygons = []
    for i, p in enumerate(_require(obj, "map_polygons", "")):
        path = f"map_polygons[{i}]"
        try:
            polygons.append(
                MapPolygon(
                    id=str(_require(p, "id", path)),
                    points=np.asarray(_require(p, "points", path), dtype=float),
                    semantic=str(_require(p, "semantic", path)),
                    traffic_light=str(p.get("traffic_light", "unknown")),
                    speed_limit=float(p.get("speed_limit", 15.0)),
                )
            )
        except (ValueError, TypeError) as exc:
            raise ScenarioFormatError(path, str(exc)) from exc
    tracks = [
        _track_from_dict(t, f"agent_tracks[{i}]")
        for i, t in enumerate(_require(obj, "agent_tracks", ""))
    ]
    ego = _track_from_dict(_require(obj, "ego_track", ""), "ego_track")
    try:
        return Scenario(
            id=str(_require(obj, "id", "")),
            duration_steps=int(_require(obj, "duration_steps", "")),
            map_polygons=tuple(polygons),
            agent_tracks=tuple(tracks),
            ego_track=ego,
            route_lane_ids=tuple(str(r) for r in _require(obj, "route_lane_ids", "")),
        )
    except ValueError as exc:
        raise ScenarioFormatError("", str(exc)) from exc


def save_scenario(scenario: Scenario, path) -> None:
    payload = json.dumps(scenario_to_dict(scenario), sort_keys=True, separators=(",", ":"))
    Path(path).write_text(payload)


def load_scenario(path, min_duration_steps: int | None = None) -> Scenario:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError("", f"invalid JSON: {exc}") from exc
    scenario = scenario_from_dict(obj)
    if min_duration_steps is not None:
        try:
            scenario.validate_horizon(min_duration_steps)
        except ValueError as exc:
            raise ScenarioFormatError("duration_steps", str(exc)) from exc
    return scenario
