import math

import numpy as np
import pytest
import torch

from ritp.dynamics import BicycleState
from ritp.nn import dropout_sample
from ritp.reward import (
    IRL_BASE,
    RewardConfig,
    RewardNet,
    irl_loss,
    return_softmax_nll,
    rollout_predicted_states,
    trajectory_return,
    uncertainty_penalized_reward,
)
from ritp.synthetic import generate_synthetic_scenario
from ritp.windows import build_map_tensors, build_snapshot_batch

TP = 20


def make_net(seed=0, **kw):
    return RewardNet(RewardConfig(plan_steps=TP, **kw), torch.Generator().manual_seed(seed))


def constant_net(value=1.0):
    """All weights zero, final head bias = value: outputs `value` under any mask."""
    net = make_net()
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
        net.head.layers[-1].bias.fill_(value)
    return net


def ego_state_at(scenario, step):
    s = scenario.ego_track.states[step]
    return BicycleState(s[0], s[1], s[2], float(np.hypot(s[3], s[4])))


@pytest.fixture(scope="module")
def scenario():
    return generate_synthetic_scenario("straight_follow", 2)


class TestRolloutPredictedStates:
    def test_tracks_logged_future(self, scenario):
        step = 20
        state = ego_state_at(scenario, step)
        action = scenario.ego_track.positions[step + 1 : step + 1 + TP]
        batch = rollout_predicted_states(state, action, scenario, step)
        # rebuild predicted ego positions from the snapshot descriptors is
        # indirect; instead rerun the tracker and compare directly
        from ritp.dynamics import rollout_tracking

        states = rollout_tracking(state, action, n_steps=TP)
        pred = np.array([[s.x, s.y] for s in states[1:]])
        assert batch.size == TP
        assert not batch.truncated
        assert np.max(np.linalg.norm(pred - action, axis=1)) < 0.5

    def test_truncation_flag(self, scenario):
        step = scenario.duration_steps - 5
        state = ego_state_at(scenario, step)
        action = np.tile(state.position, (TP, 1)) + np.linspace(0, 5, TP)[:, None]
        batch = rollout_predicted_states(state, action, scenario, step)
        assert batch.truncated
        assert batch.size == TP

    def test_deterministic(self, scenario):
        state = ego_state_at(scenario, 20)
        action = scenario.ego_track.positions[21 : 21 + TP]
        b1 = rollout_predicted_states(state, action, scenario, 20)
        b2 = rollout_predicted_states(state, action, scenario, 20)
        assert torch.equal(b1.agent_feats, b2.agent_feats)


class TestTrajectoryReturn:
    def test_constant_net_sums_to_horizon(self, scenario):
        net = constant_net(1.0)
        state = ego_state_at(scenario, 20)
        action = scenario.ego_track.positions[21 : 21 + TP]
        batch = rollout_predicted_states(state, action, scenario, 20)
        masks = net.sample_masks(torch.Generator().manual_seed(0))
        assert float(trajectory_return(net, batch, masks)) == pytest.approx(TP)

    def test_sum_decomposition(self, scenario):
        net = make_net(seed=3)
        state = ego_state_at(scenario, 20)
        action = scenario.ego_track.positions[21 : 21 + TP]
        batch = rollout_predicted_states(state, action, scenario, 20)
        masks = net.sample_masks(torch.Generator().manual_seed(1))
        rewards = net.state_rewards(batch, masks)
        total = float(trajectory_return(net, batch, masks))
        first = float(rewards[: TP // 2].sum())
        second = float(rewards[TP // 2 :].sum())
        assert total == pytest.approx(first + second, abs=1e-12)

    def test_same_masks_same_value(self, scenario):
        net = make_net(seed=4)
        state = ego_state_at(scenario, 20)
        action = scenario.ego_track.positions[21 : 21 + TP]
        batch = rollout_predicted_states(state, action, scenario, 20)
        masks = net.sample_masks(torch.Generator().manual_seed(2))
        v1 = float(trajectory_return(net, batch, masks))
        v2 = float(trajectory_return(net, batch, masks))
        assert v1 == v2


class TestIrlLoss:
    def test_two_candidate_arithmetic(self):
        # returns (1, 0), base 1.1: demo probability 1.1 / 2.1
        nll = return_softmax_nll(torch.tensor([1.0, 0.0], dtype=torch.float64))
        assert float(nll) == pytest.approx(-math.log(1.1 / 2.1), abs=1e-12)
        assert IRL_BASE == 1.1

    def test_single_candidate_zero_log_term(self):
        nll = return_softmax_nll(torch.tensor([2.5], dtype=torch.float64))
        assert float(nll) == pytest.approx(0.0, abs=1e-15)

    def test_constant_shift_invariance(self):
        r = torch.tensor([0.3, -1.2, 2.0], dtype=torch.float64)
        assert float(return_softmax_nll(r)) == pytest.approx(
            float(return_softmax_nll(r + 57.0)), abs=1e-9
        )

    def test_demo_only_candidate_set_is_regularizer(self, scenario):
        net = make_net(seed=5)
        state = ego_state_at(scenario, 20)
        demo = scenario.ego_track.positions[21 : 21 + TP]
        batch = rollout_predicted_states(state, demo, scenario, 20)
        masks = net.sample_masks(torch.Generator().manual_seed(3))
        loss = irl_loss(net, batch, [batch], masks)
        # two identical entries: softmax gives exactly 1/2
        expected = math.log(2.0) + float(net.regularizer())
        assert float(loss) == pytest.approx(expected, abs=1e-9)

    def test_empty_candidates_rejected(self, scenario):
        net = make_net()
        state = ego_state_at(scenario, 20)
        demo = scenario.ego_track.positions[21 : 21 + TP]
        batch = rollout_predicted_states(state, demo, scenario, 20)
        with pytest.raises(ValueError):
            irl_loss(net, batch, [], None)

    def test_gradient_check_frozen_masks(self, scenario):
        from ritp.nn import directional_grad_check

        net = make_net(seed=6, hidden_dim=8)
        state = ego_state_at(scenario, 20)
        demo = scenario.ego_track.positions[21 : 21 + TP]
        mt = build_map_tensors(scenario)
        demo_batch = rollout_predicted_states(state, demo, scenario, 20, map_tensors=mt)
        alt = demo + np.array([0.0, 1.0])
        alt_batch = rollout_predicted_states(state, alt, scenario, 20, map_tensors=mt)
        masks = net.sample_masks(torch.Generator().manual_seed(4))
        params = list(net.parameters())
        directional_grad_check(
            lambda: irl_loss(net, demo_batch, [alt_batch], masks), params, draws=20
        )


class _CyclingStub:
    """Stub reward net: passes alternate between constant 0 and constant 2."""

    def __init__(self, horizon):
        self.horizon = horizon
        self.calls = 0

    def sample_masks(self, generator):
        return None

    def state_rewards(self, batch, masks):
        value = 0.0 if self.calls % 2 == 0 else 2.0
        self.calls += 1
        return torch.full((self.horizon,), value, dtype=torch.float64)


class TestUncertaintyPenalizedReward:
    def test_constant_samples(self, scenario):
        # all passes return r0: uncertainty = 1 exactly, r = T_p (r0 - lambda)
        net = constant_net(0.7)
        state = ego_state_at(scenario, 20)
        action = scenario.ego_track.positions[21 : 21 + TP]
        r = uncertainty_penalized_reward(
            net, state, action, scenario, 20, num_passes=10, penalty=1.5,
            generator=torch.Generator().manual_seed(0),
        )
        assert r == pytest.approx(TP * (0.7 - 1.5), abs=1e-9)

    def test_two_pass_hand_arithmetic(self, scenario):
        # O=2 with per-step rewards {0, 2}: mean 1, u = 1 + 2 - 1 = 2 -> 1 - 2 lambda
        stub = _CyclingStub(TP)
        state = ego_state_at(scenario, 20)
        action = scenario.ego_track.positions[21 : 21 + TP]
        lam = 1.5
        r = uncertainty_penalized_reward(
            stub, state, action, scenario, 20, num_passes=2, penalty=lam,
            generator=torch.Generator().manual_seed(0),
        )
        assert r == pytest.approx(TP * (1.0 - 2.0 * lam), abs=1e-9)

    def test_monotone_in_penalty(self, scenario):
        net = make_net(seed=7)
        state = ego_state_at(scenario, 20)
        action = scenario.ego_track.positions[21 : 21 + TP]
        values = [
            uncertainty_penalized_reward(
                net, state, action, scenario, 20, num_passes=6, penalty=lam,
                generator=torch.Generator().manual_seed(5),
            )
            for lam in (0.0, 1.0, 2.0)
        ]
        assert values[0] >= values[1] >= values[2]

    def test_uncertainty_floor(self, scenario):
        # empirical uncertainty never drops below sigma^2 / tau = 1
        net = make_net(seed=8)
        state = ego_state_at(scenario, 20)
        action = scenario.ego_track.positions[21 : 21 + TP]
        batch = rollout_predicted_states(state, action, scenario, 20)
        g = torch.Generator().manual_seed(6)
        samples = torch.stack(
            [net.state_rewards(batch, net.sample_masks(g)) for _ in range(8)]
        )
        u = 1.0 + (samples**2).mean(0) - samples.mean(0) ** 2
        assert float(u.min()) >= 1.0

    def test_requires_two_passes(self, scenario):
        net = make_net()
        state = ego_state_at(scenario, 20)
        action = scenario.ego_track.positions[21 : 21 + TP]
        with pytest.raises(ValueError):
            uncertainty_penalized_reward(
                net, state, action, scenario, 20, num_passes=1,
                generator=torch.Generator().manual_seed(0),
            )


def test_irl_directional_learning():
    """A short IRL run raises the demo softmax probability above uniform on
    held-out states."""
    train_sc = [generate_synthetic_scenario("straight_follow", s) for s in (0, 2)]
    test_sc = [generate_synthetic_scenario("straight_follow", 4)]
    net = make_net(seed=10, hidden_dim=8)
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    g = torch.Generator().manual_seed(7)

    def batches(sc, step):
        mt = build_map_tensors(sc)
        state = ego_state_at(sc, step)
        demo = sc.ego_track.positions[step + 1 : step + 1 + TP]
        demo_b = rollout_predicted_states(state, demo, sc, step, map_tensors=mt)
        cands = []
        for dy in (-2.5, 2.5, -1.2):
            alt = demo + np.array([0.0, dy])
            cands.append(rollout_predicted_states(state, alt, sc, step, map_tensors=mt))
        return demo_b, cands

    train = [batches(sc, step) for sc in train_sc for step in (15, 45)]
    held_out = [batches(sc, step) for sc in test_sc for step in (25, 55)]

    def demo_probability(sets):
        probs = []
        with torch.no_grad():
            for demo_b, cands in sets:
                returns = torch.stack(
                    [trajectory_return(net, b, None) for b in [demo_b] + cands]
                )
                probs.append(float(torch.softmax(returns * math.log(IRL_BASE), 0)[0]))
        return float(np.mean(probs))

    for i in range(300):
        demo_b, cands = train[i % len(train)]
        opt.zero_grad()
        loss = irl_loss(net, demo_b, cands, net.sample_masks(g))
        loss.backward()
        opt.step()

    uniform = 1.0 / 4.0
    assert demo_probability(held_out) > uniform
