"""Window and snapshot assembly: scenario slices as network-ready arrays.

A SceneWindow is the T-step history view ending at a given step, with the ego
track optionally overridden by simulated states. A SnapshotBatch is a stack of
single-step views (used by the reward network over predicted futures), sharing
one static map. Both carry precomputed relative positional arrays for every
attention block, so the networks stay free of scenario bookkeeping.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .geometry import heading_vector, signed_angle_between
from .scene import AGENT_TYPES, SEMANTIC_POLYGON, TRAFFIC_LIGHT, Scenario, rel_pos_array

DTYPE = torch.float64


def _track_states(scenario: Scenario, ego_states: np.ndarray | None):
    ego = scenario.ego_track.states if ego_states is None else ego_states
    all_states = [ego] + [t.states for t in scenario.agent_tracks]
    types = ["ego"] + [t.semantic for t in scenario.agent_tracks]
    return np.stack(all_states), np.array([AGENT_TYPES.index(t) for t in types])


def _descriptor_arrays(states: np.ndarray) -> np.ndarray:
    """[A, T, 4] descriptors from [A, T, 5] states; column 0 has no
    predecessor, so its displacement terms are the degenerate zeros."""
    pos = states[..., :2]
    head = states[..., 2]
    vel = states[..., 3:5]
    disp = np.zeros_like(pos)
    disp[:, 1:] = pos[:, 1:] - pos[:, :-1]
    step_len = np.linalg.norm(disp, axis=-1)
    hvec = heading_vector(head)
    motion_ang = np.where(step_len > 0.0, signed_angle_between(hvec, disp), 0.0)
    speed = np.linalg.norm(vel, axis=-1)
    vel_ang = np.where(speed > 0.0, signed_angle_between(hvec, vel), 0.0)
    return np.stack([step_len, motion_ang, speed, vel_ang], axis=-1)


@dataclass
class MapTensors:
    point_feats: torch.Tensor  # [M, P, 1]
    pos: np.ndarray  # [M, P, 2]
    orient: np.ndarray  # [M, P]
    semantic: torch.Tensor  # [M] long
    traffic_light: torch.Tensor  # [M] long
    rpe_points: torch.Tensor  # [M, 1, P-1, 4] first point -> others
    rpe_m2m: torch.Tensor  # [M, M, 4]

    @property
    def num_polygons(self) -> int:
        return self.point_feats.shape[0]


def build_map_tensors(scenario: Scenario) -> MapTensors:
    polys = scenario.map_polygons
    pos = np.stack([p.xy for p in polys])
    orient = np.stack([p.points[:, 2] for p in polys])
    seg = np.zeros(pos.shape[:2])
    seg[:, 1:] = np.linalg.norm(np.diff(pos, axis=1), axis=-1)
    semantic = np.array([SEMANTIC_POLYGON.index(p.semantic) for p in polys])
    tl = np.array([TRAFFIC_LIGHT.index(p.traffic_light) for p in polys])
    rpe_points = rel_pos_array(
        pos[:, None, 0], orient[:, None, 0], 0.0, pos[:, 1:], orient[:, 1:], 0.0
    )[:, None, :, :]
    rpe_m2m = rel_pos_array(
        pos[:, None, 0, :], orient[:, None, 0], 0.0, pos[None, :, 0, :], orient[None, :, 0], 0.0
    )
    return MapTensors(
        point_feats=torch.as_tensor(seg[..., None], dtype=DTYPE),
        pos=pos,
        orient=orient,
        semantic=torch.as_tensor(semantic, dtype=torch.long),
        traffic_light=torch.as_tensor(tl, dtype=torch.long),
        rpe_points=torch.as_tensor(rpe_points, dtype=DTYPE),
        rpe_m2m=torch.as_tensor(rpe_m2m, dtype=DTYPE),
    )


@dataclass
class SceneWindow:
    scenario_id: str
    step: int  # absolute step of the window's last (current) column
    agent_feats: torch.Tensor  # [A, T, 4]
    agent_types: torch.Tensor  # [A] long
    agent_pos: np.ndarray  # [A, T, 2]
    agent_head: np.ndarray  # [A, T]
    current_states: np.ndarray  # [A, 5] at the current step
    map: MapTensors
    rpe_temporal: torch.Tensor  # [A, T, T, 4]
    rpe_a2m: torch.Tensor  # [A, T, M, 4]
    rpe_a2a: torch.Tensor  # [T, A, A, 4]
    rpe_now_hist: torch.Tensor  # [A, T, 4] current pose -> own history
    rpe_now_map: torch.Tensor  # [A, M, 4]
    rpe_now_agents: torch.Tensor  # [A, A, 4]

    @property
    def num_agents(self) -> int:
        return self.agent_feats.shape[0]

    @property
    def horizon(self) -> int:
        return self.agent_feats.shape[1]

    def ego_position(self) -> np.ndarray:
        return self.current_states[0, :2].copy()

    def ego_heading(self) -> float:
        return float(self.current_states[0, 2])

    def agent_origins(self):
        """Per-agent current pose (positions [A,2], headings [A])."""
        return self.current_states[:, :2].copy(), self.current_states[:, 2].copy()


def build_scene_window(scenario: Scenario, step: int, history_steps: int,
                       ego_states: np.ndarray | None = None,
                       map_tensors: MapTensors | None = None) -> SceneWindow:
    """History window of `history_steps` columns ending at `step` (inclusive).

    ego_states, when given, replaces the logged ego track (full-length
    [duration, 5] array, e.g. maintained by the closed-loop simulator). Steps
    before scenario start are padded by repeating the first state, which keeps
    their displacement descriptors at the degenerate zeros.
    """
    if not 0 <= step < scenario.duration_steps:
        raise ValueError(f"step {step} outside scenario duration")
    states_all, types = _track_states(scenario, ego_states)
    first = step - history_steps + 1
    idx = np.clip(np.arange(first - 1, step + 1), 0, scenario.duration_steps - 1)
    slab = states_all[:, idx]  # one extra leading column supplies displacements
    feats = _descriptor_arrays(slab)[:, 1:]
    window = slab[:, 1:]
    pos = window[..., :2]
    head = window[..., 2]
    steps_axis = np.arange(first, step + 1, dtype=float)

    mt = map_tensors if map_tensors is not None else build_map_tensors(scenario)
    rpe_temporal = rel_pos_array(
        pos[:, :, None, :], head[:, :, None], steps_axis[None, :, None],
        pos[:, None, :, :], head[:, None, :], steps_axis[None, None, :],
    )
    rpe_a2m = rel_pos_array(
        pos[:, :, None, :], head[:, :, None], 0.0,
        mt.pos[None, None, :, 0, :], mt.orient[None, None, :, 0], 0.0,
    )
    pos_t = np.transpose(pos, (1, 0, 2))
    head_t = head.T
    rpe_a2a = rel_pos_array(
        pos_t[:, :, None, :], head_t[:, :, None], 0.0,
        pos_t[:, None, :, :], head_t[:, None, :], 0.0,
    )
    cur_pos = pos[:, -1]
    cur_head = head[:, -1]
    rpe_now_hist = rel_pos_array(
        cur_pos[:, None, :], cur_head[:, None], float(step),
        pos, head, steps_axis[None, :],
    )
    rpe_now_map = rel_pos_array(
        cur_pos[:, None, :], cur_head[:, None], 0.0,
        mt.pos[None, :, 0, :], mt.orient[None, :, 0], 0.0,
    )
    rpe_now_agents = rel_pos_array(
        cur_pos[:, None, :], cur_head[:, None], 0.0, cur_pos[None, :, :], cur_head[None, :], 0.0
    )
    return SceneWindow(
        scenario_id=scenario.id,
        step=step,
        agent_feats=torch.as_tensor(feats, dtype=DTYPE),
        agent_types=torch.as_tensor(types, dtype=torch.long),
        agent_pos=pos.copy(),
        agent_head=head.copy(),
        current_states=window[:, -1].copy(),
        map=mt,
        rpe_temporal=torch.as_tensor(rpe_temporal, dtype=DTYPE),
        rpe_a2m=torch.as_tensor(rpe_a2m, dtype=DTYPE),
        rpe_a2a=torch.as_tensor(rpe_a2a, dtype=DTYPE),
        rpe_now_hist=torch.as_tensor(rpe_now_hist, dtype=DTYPE),
        rpe_now_map=torch.as_tensor(rpe_now_map, dtype=DTYPE),
        rpe_now_agents=torch.as_tensor(rpe_now_agents, dtype=DTYPE),
    )


@dataclass
class SnapshotBatch:
    agent_feats: torch.Tensor  # [B, A, 4]
    agent_types: torch.Tensor  # [A] long
    valid: torch.Tensor  # [B, A] bool
    map: MapTensors
    rpe_a2m: torch.Tensor  # [B, A, M, 4]
    rpe_a2a: torch.Tensor  # [B, A, A, 4]
    truncated: bool = False

    @property
    def size(self) -> int:
        return self.agent_feats.shape[0]


def concat_snapshot_batches(batches: list) -> SnapshotBatch:
    """Stack snapshot batches that share one scenario map into a single batch."""
    first = batches[0]
    if any(b.map is not first.map for b in batches):
        raise ValueError("snapshot batches must share the same map tensors")
    return SnapshotBatch(
        agent_feats=torch.cat([b.agent_feats for b in batches]),
        agent_types=first.agent_types,
        valid=torch.cat([b.valid for b in batches]),
        map=first.map,
        rpe_a2m=torch.cat([b.rpe_a2m for b in batches]),
        rpe_a2a=torch.cat([b.rpe_a2a for b in batches]),
        truncated=any(b.truncated for b in batches),
    )


def build_snapshot_batch(scenario: Scenario, ego_snapshots: np.ndarray, first_step: int,
                         map_tensors: MapTensors | None = None,
                         prev_ego_state: np.ndarray | None = None) -> SnapshotBatch:
    """Single-step descriptor snapshots for steps first_step .. first_step+B-1.

    ego_snapshots: [B, 5] predicted ego states; other agents replay the log and
    are marked invalid (truncated flag set) past the scenario end.
    """
    B = ego_snapshots.shape[0]
    n_agents = 1 + len(scenario.agent_tracks)
    states = np.zeros((B, n_agents, 5))
    valid = np.ones((B, n_agents), dtype=bool)
    states[:, 0] = ego_snapshots
    truncated = False
    steps = first_step + np.arange(B)
    clipped = np.minimum(steps, scenario.duration_steps - 1)
    if np.any(steps != clipped):
        truncated = True
        valid[steps != clipped, 1:] = False
    for j, track in enumerate(scenario.agent_tracks):
        states[:, j + 1] = track.states[clipped]
    types = np.array([AGENT_TYPES.index("ego")]
                     + [AGENT_TYPES.index(t.semantic) for t in scenario.agent_tracks])

    # previous states for displacement descriptors
    prev = np.zeros_like(states)
    prev[1:, 0] = ego_snapshots[:-1]
    prev[0, 0] = prev_ego_state if prev_ego_state is not None else ego_snapshots[0]
    prev_steps = np.maximum(clipped - 1, 0)
    for j, track in enumerate(scenario.agent_tracks):
        prev[:, j + 1] = track.states[prev_steps]

    slab = np.stack([prev, states], axis=2)  # [B, A, 2, 5]
    feats = _descriptor_arrays(slab.reshape(B * n_agents, 2, 5))[:, 1]
    feats = feats.reshape(B, n_agents, 4)

    mt = map_tensors if map_tensors is not None else build_map_tensors(scenario)
    pos = states[..., :2]
    head = states[..., 2]
    rpe_a2m = rel_pos_array(
        pos[:, :, None, :], head[:, :, None], 0.0,
        mt.pos[None, None, :, 0, :], mt.orient[None, None, :, 0], 0.0,
    )
    rpe_a2a = rel_pos_array(
        pos[:, :, None, :], head[:, :, None], 0.0, pos[:, None, :, :], head[:, None, :], 0.0
    )
    return SnapshotBatch(
        agent_feats=torch.as_tensor(feats, dtype=DTYPE),
        agent_types=torch.as_tensor(types, dtype=torch.long),
        valid=torch.as_tensor(valid),
        map=mt,
        rpe_a2m=torch.as_tensor(rpe_a2m, dtype=DTYPE),
        rpe_a2a=torch.as_tensor(rpe_a2a, dtype=DTYPE),
        truncated=truncated,
    )
