"""Training orchestration: experience collection with exploration noise, twin
critic TD regression, critic-ranked imitation updates of the actor, and the
imitation / reward-learning stage loops.

All randomness flows from explicit seeds; two runs with the same config and
seed produce identical checkpoints.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .critic import CriticConfig, CriticEnsemble, td_target
from .dynamics import BicycleState, step_bicycle, track_trajectory
from .frenet import ReferenceLine
from .noise import NoiseParams, apply_clipped_trajectory_noise, apply_trajectory_noise
from .policy import MotionFormer, PolicyConfig, il_loss_multi, select_action
from .reward import (
    RewardConfig,
    RewardNet,
    irl_loss,
    return_softmax_nll,
    rollout_predicted_states,
    trajectory_return,
    uncertainty_penalized_reward,
)
from .sampler import SamplerConfig, SamplerError, sample_actions, with_speeds_around
from .scene import Scenario
from .synthetic import route_reference_line
from .windows import build_map_tensors, build_scene_window, concat_snapshot_batches


class TrainingDiverged(RuntimeError):
    def __init__(self, message, dump_path=None):
        self.dump_path = dump_path
        super().__init__(message)


@dataclass
class Experience:
    scenario_id: str
    step: int  # step of state s
    ego_hist: np.ndarray  # [T+1, 5] states covering the window of s (plus predecessor)
    ego_hist_next: np.ndarray  # same for s'
    actions: np.ndarray  # [S+1, T_p, 2]; row 0 is the executed noisy action a0
    reward: float
    terminal: bool


class ReplayBuffer:
    """Ring buffer with FIFO eviction and uniform sampling."""

    def __init__(self, capacity: int = 10_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, item: Experience) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def sample(self, n: int, rng: np.random.Generator) -> list:
        idx = rng.integers(0, len(self._items), size=n)
        return [self._items[int(i)] for i in idx]


class TrainingEnv:
    """Non-reactive log-replay environment stepping the ego at 10 Hz.

    Episodes cycle round-robin over the corpus; each ends when the remaining
    log can no longer cover a full reward rollout horizon.
    """

    def __init__(self, corpus: list, history_steps: int, plan_steps: int, dt: float = 0.1):
        if not corpus:
            raise ValueError("empty scenario corpus")
        self.corpus = corpus
        self.maps = [build_map_tensors(sc) for sc in corpus]
        self.lines = [route_reference_line(sc) for sc in corpus]
        self.T = history_steps
        self.Tp = plan_steps
        self.dt = dt
        self._episode = -1
        self.reset()

    def reset(self) -> None:
        self._episode += 1
        i = self._episode % len(self.corpus)
        self.scenario: Scenario = self.corpus[i]
        self.map_tensors = self.maps[i]
        self.line: ReferenceLine = self.lines[i]
        self.step = self.T - 1
        self.ego_states = self.scenario.ego_track.states.copy()
        s = self.ego_states[self.step]
        self.bike = BicycleState(s[0], s[1], s[2], float(np.hypot(s[3], s[4])))

    @property
    def terminal_step(self) -> int:
        return self.scenario.duration_steps - self.Tp - 1

    def window(self):
        return build_scene_window(self.scenario, self.step, self.T,
                                  ego_states=self.ego_states, map_tensors=self.map_tensors)

    def apply_action(self, action: np.ndarray) -> bool:
        """Track the fresh plan for one tick; returns the terminal flag."""
        control = track_trajectory(self.bike, action, 0, self.dt)
        self.bike = step_bicycle(self.bike, control, self.dt)
        self.step += 1
        b = self.bike
        self.ego_states[self.step] = [
            b.x, b.y, b.heading, b.speed * np.cos(b.heading), b.speed * np.sin(b.heading)
        ]
        return self.step >= self.terminal_step

    def ego_window_slice(self) -> np.ndarray:
        lo = max(self.step - self.T, 0)
        pad = self.T + 1 - (self.step + 1 - lo)
        chunk = self.ego_states[lo : self.step + 1]
        if pad > 0:
            chunk = np.vstack([np.repeat(chunk[:1], pad, axis=0), chunk])
        return chunk.copy()


def _patched_states(scenario: Scenario, step: int, hist: np.ndarray, history_steps: int):
    states = scenario.ego_track.states.copy()
    lo = max(step - history_steps, 0)
    states[lo : step + 1] = hist[-(step + 1 - lo):]
    return states


def window_from_experience(exp: Experience, scenario: Scenario, history_steps: int,
                           map_tensors=None, next_state: bool = False):
    step = exp.step + 1 if next_state else exp.step
    hist = exp.ego_hist_next if next_state else exp.ego_hist
    states = _patched_states(scenario, step, hist, history_steps)
    return build_scene_window(scenario, step, history_steps, ego_states=states,
                              map_tensors=map_tensors)


@dataclass
class RitpHooks:
    """Callbacks observed by tests and the CLI progress reporting."""

    on_log: object = None


class RitpTrainer:
    """Runs the actor-critic loop; see `train` for the schedule."""

    def __init__(self, actor: MotionFormer, ensemble: CriticEnsemble, reward_net: RewardNet,
                 env: TrainingEnv, cfg: dict, seed: int):
        self.actor = actor
        self.actor_target = copy.deepcopy(actor)
        for p in self.actor_target.parameters():
            p.requires_grad_(False)
        self.ensemble = ensemble
        self.reward_net = reward_net
        self.env = env
        self.cfg = cfg
        self.noise = NoiseParams(beta=cfg["beta"], beta_prime=cfg["beta_prime"],
                                 clip_c=cfg["clip_c"])
        self.buffer = ReplayBuffer(int(cfg["buffer_capacity"]))
        self.rng_noise = np.random.default_rng([seed, 1])
        self.rng_sample = np.random.default_rng([seed, 2])
        self.gen_reward = torch.Generator().manual_seed(seed + 3)
        self.gen_dropout = torch.Generator().manual_seed(seed + 4)
        self.opt_critic = torch.optim.AdamW(self.ensemble.online_parameters(),
                                            lr=cfg["rl_lr"], weight_decay=cfg["weight_decay"])
        self.opt_actor = torch.optim.AdamW(self.actor.parameters(), lr=cfg["rl_lr"],
                                           weight_decay=cfg["weight_decay"])
        self.env_steps = 0
        self.iterations = 0

    # -- Algorithm steps -----------------------------------------------------
    def sampler_config(self) -> SamplerConfig:
        c = self.cfg
        base = SamplerConfig(
            durations=tuple(c["sampler_durations"]),
            lane_keep_offsets=tuple(c["sampler_lane_keep_offsets"]),
            lane_change_offsets=tuple(c["sampler_lane_change_offsets"]),
            terminal_speeds=(1.0,),
            max_samples=int(c["sampler_cap"]),
            horizon_steps=int(c["plan_steps"]),
        )
        return base

    def collect_step(self) -> dict:
        """One env tick: act with exploration noise, sample alternatives, store."""
        env = self.env
        w = env.window()
        with torch.no_grad():
            out = self.actor.decode_modes(self.actor.encode_scene(w))
        policy_action = select_action(out)
        a0 = apply_trajectory_noise(policy_action, env.bike.position, self.noise.beta,
                                    self.rng_noise)
        samples = []
        if int(self.cfg["num_action_samples"]) > 0:
            try:
                cfg = with_speeds_around(self.sampler_config(), env.bike.speed)
                samples = sample_actions(env.bike, env.line, cfg)
                samples = samples[: int(self.cfg["num_action_samples"])]
            except SamplerError:
                samples = []
        reward = uncertainty_penalized_reward(
            self.reward_net, env.bike, a0, env.scenario, env.step,
            num_passes=int(self.cfg["reward_passes"]), penalty=self.cfg["uncertainty_penalty"],
            tau=self.cfg["tau"], sigma=self.cfg["sigma"], generator=self.gen_reward,
            map_tensors=env.map_tensors,
        )
        hist = env.ego_window_slice()
        step = env.step
        scenario_id = env.scenario.id
        terminal = env.apply_action(a0)
        hist_next = env.ego_window_slice()
        self.buffer.add(Experience(
            scenario_id=scenario_id, step=step, ego_hist=hist, ego_hist_next=hist_next,
            actions=np.stack([a0] + samples), reward=float(reward), terminal=terminal,
        ))
        if terminal:
            env.reset()
        self.env_steps += 1
        return {"reward": float(reward), "num_samples": len(samples)}

    def _scenario_by_id(self, scenario_id: str):
        for sc, mt in zip(self.env.corpus, self.env.maps):
            if sc.id == scenario_id:
                return sc, mt
        raise KeyError(scenario_id)

    def critic_update(self) -> dict:
        n = int(self.cfg["optimize_batch"])
        if len(self.buffer) < n:
            return {"skipped": True}
        batch = self.buffer.sample(n, self.rng_sample)
        losses1, losses2 = [], []
        self.opt_critic.zero_grad()
        total = 0.0
        for exp in batch:
            sc, mt = self._scenario_by_id(exp.scenario_id)
            w = window_from_experience(exp, sc, self.env.T, mt)
            if exp.terminal:
                q = td_target(exp.reward, None, self.ensemble, None,
                              gamma=self.cfg["gamma"], terminal=True)
            else:
                w_next = window_from_experience(exp, sc, self.env.T, mt, next_state=True)
                with torch.no_grad():
                    out = self.actor_target.decode_modes(self.actor_target.encode_scene(w_next))
                next_action = select_action(out)
                noisy = apply_clipped_trajectory_noise(
                    next_action, w_next.ego_position(), self.noise.beta_prime,
                    self.noise.clip_c, self.rng_noise,
                )
                q = td_target(exp.reward, w_next, self.ensemble, noisy, gamma=self.cfg["gamma"])
            enc1 = self.ensemble.q1.encode_scene(w)
            enc2 = self.ensemble.q2.encode_scene(w)
            q1 = self.ensemble.q1.value(enc1, exp.actions[0])
            q2 = self.ensemble.q2.value(enc2, exp.actions[0])
            loss = (q - q1) ** 2 + (q - q2) ** 2
            total = total + loss
            losses1.append(float((q - q1) ** 2))
            losses2.append(float((q - q2) ** 2))
        total = total / n
        if not torch.isfinite(total):
            raise TrainingDiverged("critic loss is not finite")
        total.backward()
        self.opt_critic.step()
        return {"critic_loss_1": float(np.mean(losses1)), "critic_loss_2": float(np.mean(losses2))}

    def actor_update(self) -> dict:
        n = int(self.cfg["optimize_batch"])
        if len(self.buffer) < n:
            return {"skipped": True}
        batch = self.buffer.sample(n, self.rng_sample)
        self.opt_actor.zero_grad()
        total = 0.0
        switches = 0
        for exp in batch:
            sc, mt = self._scenario_by_id(exp.scenario_id)
            w = window_from_experience(exp, sc, self.env.T, mt)
            with torch.no_grad():
                enc_v = self.ensemble.q1.encode_scene(w)
                values = self.ensemble.q1.values(enc_v, exp.actions).numpy()
            best = int(np.argmax(values))
            switches += int(best != 0)
            target = exp.actions[best]
            agent_targets = self._agent_targets(sc, exp.step)
            out = self.actor.decode_modes(
                self.actor.encode_scene(w), generator=self.gen_dropout, training=True
            )
            terms = il_loss_multi(out, target, agent_targets, bool(self.cfg["mas"]))
            total = total + terms["total"]
        total = total / n
        if not torch.isfinite(total):
            raise TrainingDiverged("actor loss is not finite")
        total.backward()
        self.opt_actor.step()
        return {"actor_loss": float(total), "switch_rate": switches / n}

    def _agent_targets(self, scenario: Scenario, step: int):
        lo = step + 1
        hi = min(lo + self.env.Tp, scenario.duration_steps)
        targets = []
        for t in scenario.agent_tracks:
            fut = t.positions[lo:hi]
            if fut.shape[0] < self.env.Tp:  # hold the last logged position
                pad = np.repeat(fut[-1:], self.env.Tp - fut.shape[0], axis=0)
                fut = np.vstack([fut, pad])
            targets.append(fut)
        return np.stack(targets) if targets else None

    def soft_updates(self) -> None:
        self.ensemble.soft_update()
        xi = self.ensemble.xi
        with torch.no_grad():
            for p, pt in zip(self.actor.parameters(), self.actor_target.parameters()):
                pt.mul_(1.0 - xi).add_(xi * p)

    def train(self, total_steps: int, log_path=None, hooks: RitpHooks | None = None) -> list:
        """Alg. schedule: collect_batch env ticks, one critic update per
        iteration, actor + target updates every update_delay iterations."""
        logs = []
        log_file = open(log_path, "w") if log_path else None
        collect_batch = int(self.cfg["collect_batch"])
        delay = int(self.cfg["update_delay"])
        try:
            while self.env_steps < total_steps:
                rewards = [self.collect_step()["reward"]
                           for _ in range(min(collect_batch, total_steps - self.env_steps))]
                record = {"env_steps": self.env_steps, "reward_mean": float(np.mean(rewards))}
                record.update(self.critic_update())
                self.iterations += 1
                if self.iterations % delay == 0:
                    record.update(self.actor_update())
                    self.soft_updates()
                logs.append(record)
                if log_file:
                    log_file.write(json.dumps(record, sort_keys=True) + "\n")
                if hooks and hooks.on_log:
                    hooks.on_log(record)
        finally:
            if log_file:
                log_file.close()
        return logs


# -- stage loops --------------------------------------------------------------


def pretrain_policy(actor: MotionFormer, corpus: list, cfg: dict, seed: int,
                    log_path=None) -> list:
    """Behavior cloning on the logged demonstrations (the warm start)."""
    rng = np.random.default_rng([seed, 10])
    gen = torch.Generator().manual_seed(seed + 11)
    opt = torch.optim.AdamW(actor.parameters(), lr=cfg["pretrain_lr"],
                            weight_decay=cfg["weight_decay"])
    maps = {sc.id: build_map_tensors(sc) for sc in corpus}
    T, Tp = int(cfg["history_steps"]), int(cfg["plan_steps"])
    logs = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for it in range(int(cfg["pretrain_steps"])):
            opt.zero_grad()
            total = 0.0
            for _ in range(int(cfg["pretrain_batch"])):
                sc = corpus[int(rng.integers(0, len(corpus)))]
                step = int(rng.integers(T - 1, sc.duration_steps - Tp))
                w = build_scene_window(sc, step, T, map_tensors=maps[sc.id])
                out = actor.decode_modes(actor.encode_scene(w), generator=gen, training=True)
                ego_target = sc.ego_track.positions[step + 1 : step + 1 + Tp]
                others = np.stack([t.positions[step + 1 : step + 1 + Tp]
                                   for t in sc.agent_tracks]) if sc.agent_tracks else None
                total = total + il_loss_multi(out, ego_target, others, bool(cfg["mas"]))["total"]
            total = total / int(cfg["pretrain_batch"])
            if not torch.isfinite(total):
                raise TrainingDiverged("pretrain loss is not finite")
            total.backward()
            opt.step()
            record = {"step": it, "il_loss": float(total)}
            logs.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if log_file:
            log_file.close()
    return logs


def train_reward(reward_net: RewardNet, corpus: list, cfg: dict, seed: int,
                 log_path=None) -> list:
    """Return-softmax reward learning against sampled alternative plans."""
    rng = np.random.default_rng([seed, 20])
    gen = torch.Generator().manual_seed(seed + 21)
    opt = torch.optim.Adam(reward_net.parameters(), lr=cfg["irl_lr"])
    maps = {sc.id: build_map_tensors(sc) for sc in corpus}
    lines = {sc.id: route_reference_line(sc) for sc in corpus}
    T, Tp = int(cfg["history_steps"]), int(cfg["plan_steps"])
    logs = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for it in range(int(cfg["irl_steps"])):
            sc = corpus[int(rng.integers(0, len(corpus)))]
            step = int(rng.integers(T - 1, sc.duration_steps - Tp))
            s = sc.ego_track.states[step]
            state = BicycleState(s[0], s[1], s[2], float(np.hypot(s[3], s[4])))
            demo = sc.ego_track.positions[step + 1 : step + 1 + Tp]
            demo_batch = rollout_predicted_states(state, demo, sc, step,
                                                  map_tensors=maps[sc.id])
            try:
                cfg_s = with_speeds_around(
                    SamplerConfig(
                        durations=tuple(cfg["sampler_durations"]),
                        lane_keep_offsets=tuple(cfg["sampler_lane_keep_offsets"]),
                        lane_change_offsets=tuple(cfg["sampler_lane_change_offsets"]),
                        terminal_speeds=(1.0,),
                        max_samples=int(cfg["irl_candidates"]),
                        horizon_steps=Tp,
                    ),
                    state.speed,
                )
                candidates = sample_actions(state, lines[sc.id], cfg_s)
            except SamplerError:
                continue
            candidates = candidates[: int(cfg["irl_candidates"])]
            cand_batches = [
                rollout_predicted_states(state, a, sc, step, map_tensors=maps[sc.id])
                for a in candidates
            ]
            masks = reward_net.sample_masks(gen)
            stacked = concat_snapshot_batches([demo_batch] + cand_batches)
            rewards = reward_net.state_rewards(stacked, masks).reshape(
                1 + len(cand_batches), Tp
            )
            returns = rewards.sum(dim=1)
            loss = return_softmax_nll(returns) + reward_net.regularizer()
            if not torch.isfinite(loss):
                raise TrainingDiverged("reward loss is not finite")
            opt.zero_grad()
            loss.backward()
            opt.step()
            record = {"step": it, "irl_loss": float(loss),
                      "demo_softmax": float(torch.softmax(returns * math.log(1.1), 0)[0])}
            logs.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if log_file:
            log_file.close()
    return logs
