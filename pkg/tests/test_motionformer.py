import numpy as np
import pytest
import torch

from ritp.policy import MIN_SCALE, MotionFormer, PolicyConfig, PolicyOutput, il_loss, il_loss_multi, select_action
from ritp.scene import AgentTrack, Scenario
from ritp.synthetic import generate_synthetic_scenario, transform_scenario
from ritp.windows import build_map_tensors, build_scene_window

T, TP = 10, 20


def make_policy(seed=0, **kw):
    cfg = PolicyConfig(history_steps=T, plan_steps=TP, **kw)
    return MotionFormer(cfg, torch.Generator().manual_seed(seed))


def make_output(loc, scale, logits):
    """Hand-built PolicyOutput in an identity frame for loss arithmetic tests."""
    loc = torch.as_tensor(loc, dtype=torch.float64)
    A, K = loc.shape[:2]
    return PolicyOutput(
        proposed_loc=loc.clone().requires_grad_(True),
        proposed_scale=torch.as_tensor(scale, dtype=torch.float64).requires_grad_(True),
        refined_loc=loc.clone().requires_grad_(True),
        refined_scale=torch.as_tensor(scale, dtype=torch.float64).requires_grad_(True),
        pi_logits=torch.as_tensor(logits, dtype=torch.float64).requires_grad_(True),
        origins=np.zeros((A, 2)),
        origin_headings=np.zeros(A),
    )


class TestEncodeScene:
    def test_shapes(self, follow_scenario, follow_window):
        mf = make_policy()
        enc = mf.encode_scene(follow_window)
        M = len(follow_scenario.map_polygons)
        A = 1 + len(follow_scenario.agent_tracks)
        assert enc.map_enc.shape == (M, 16)
        assert enc.agent_enc.shape == (A, T, 16)

    def test_deterministic_in_eval(self, follow_window):
        mf = make_policy()
        e1 = mf.encode_scene(follow_window).agent_enc
        e2 = mf.encode_scene(follow_window).agent_enc
        assert torch.equal(e1, e2)

    def test_far_agent_beyond_radius_leaves_ego_unchanged(self, follow_scenario):
        mf = make_policy()
        base_w = build_scene_window(follow_scenario, 20, T)
        base = mf.encode_scene(base_w).agent_enc[0]

        far_states = follow_scenario.ego_track.states.copy()
        far_states[:, :2] += 400.0  # beyond the 50 m attention radius
        far = AgentTrack(id="far", semantic="vehicle", states=far_states)
        sc = Scenario(
            id="aug", duration_steps=follow_scenario.duration_steps,
            map_polygons=follow_scenario.map_polygons,
            agent_tracks=follow_scenario.agent_tracks + (far,),
            ego_track=follow_scenario.ego_track,
            route_lane_ids=follow_scenario.route_lane_ids,
        )
        aug = mf.encode_scene(build_scene_window(sc, 20, T)).agent_enc[0]
        assert torch.allclose(base, aug, atol=1e-9)

    def test_rigid_motion_invariance(self, follow_scenario):
        mf = make_policy()
        w1 = build_scene_window(follow_scenario, 25, T)
        sc2 = transform_scenario(follow_scenario, 1.234, (57.0, -23.0))
        w2 = build_scene_window(sc2, 25, T)
        e1 = mf.encode_scene(w1)
        e2 = mf.encode_scene(w2)
        assert torch.allclose(e1.agent_enc, e2.agent_enc, atol=1e-6)
        assert torch.allclose(e1.map_enc, e2.map_enc, atol=1e-6)

    def test_action_equivariance(self, follow_scenario):
        mf = make_policy()
        angle, shift = 0.77, np.array([11.0, -4.0])
        a1 = mf.plan(build_scene_window(follow_scenario, 25, T))
        sc2 = transform_scenario(follow_scenario, angle, shift)
        a2 = mf.plan(build_scene_window(sc2, 25, T))
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        assert np.allclose(a1 @ rot.T + shift, a2, atol=1e-6)


class TestDecodeModes:
    def test_mixture_simplex(self, follow_window):
        mf = make_policy()
        out = mf.decode_modes(mf.encode_scene(follow_window))
        pi = out.pi.detach().numpy()
        assert np.all(pi >= 0.0)
        assert np.allclose(pi.sum(axis=-1), 1.0, atol=1e-12)

    def test_scales_bounded_below(self, follow_window):
        mf = make_policy()
        out = mf.decode_modes(mf.encode_scene(follow_window))
        assert float(out.proposed_scale.min()) >= MIN_SCALE
        assert float(out.refined_scale.min()) >= MIN_SCALE

    def test_six_modes_distinct_on_fork(self):
        sc = generate_synthetic_scenario("unprotected_turn", 1)
        w = build_scene_window(sc, 30, T)
        mf = make_policy(num_modes=6)
        out = mf.decode_modes(mf.encode_scene(w))
        finals = out.refined_loc[0, :, -1, :].detach().numpy()
        dists = np.linalg.norm(finals[:, None] - finals[None, :], axis=-1)
        assert (dists[np.triu_indices(6, 1)] > 0).sum() >= 2


class TestSelectAction:
    def test_argmax(self):
        out = make_output(np.zeros((1, 3, TP, 2)), np.ones((1, 3, TP, 2)),
                          np.log([[0.1, 0.7, 0.2]]))
        out.refined_loc.data[0, 1] = 5.0
        assert np.allclose(select_action(out), 5.0)

    def test_logit_shift_invariance(self, follow_window):
        mf = make_policy()
        out = mf.decode_modes(mf.encode_scene(follow_window))
        shifted = PolicyOutput(
            proposed_loc=out.proposed_loc, proposed_scale=out.proposed_scale,
            refined_loc=out.refined_loc, refined_scale=out.refined_scale,
            pi_logits=out.pi_logits + 11.0, origins=out.origins,
            origin_headings=out.origin_headings,
        )
        assert np.array_equal(select_action(out), select_action(shifted))

    def test_tie_takes_lowest_index(self):
        out = make_output(np.zeros((1, 2, TP, 2)), np.ones((1, 2, TP, 2)), [[0.3, 0.3]])
        out.refined_loc.data[0, 0] = 1.0
        out.refined_loc.data[0, 1] = 2.0
        assert np.allclose(select_action(out), 1.0)


class TestIlLoss:
    def test_closed_form_single_mode(self):
        # K=1, target = mu everywhere, sigma = 1: L_c = 2 log 2, L_p = L_r = 2 log 2
        target = np.random.default_rng(0).normal(size=(TP, 2))
        loc = target[None, None, :, :]
        out = make_output(loc, np.ones((1, 1, TP, 2)), [[0.0]])
        terms = il_loss(out, target)
        two_log_2 = 2.0 * np.log(2.0)
        assert float(terms["classification"]) == pytest.approx(two_log_2, abs=1e-12)
        assert float(terms["proposal"]) == pytest.approx(two_log_2, abs=1e-12)
        assert float(terms["refinement"]) == pytest.approx(two_log_2, abs=1e-12)

    def test_losing_mode_perturbation_leaves_regressions(self):
        rng = np.random.default_rng(1)
        target = rng.normal(size=(TP, 2))
        loc = np.stack([target + 0.1, target + 40.0])[None]
        out = make_output(loc, np.ones((1, 2, TP, 2)), [[0.0, 0.0]])
        base = il_loss(out, target)
        out2 = make_output(loc, np.ones((1, 2, TP, 2)), [[0.0, 0.0]])
        out2.proposed_loc.data[0, 1] += 7.0  # still the loser
        out2.refined_loc.data[0, 1] += 7.0
        perturbed = il_loss(out2, target)
        assert float(base["proposal"]) == pytest.approx(float(perturbed["proposal"]), abs=1e-12)
        assert float(base["refinement"]) == pytest.approx(float(perturbed["refinement"]), abs=1e-12)

    def test_classification_gradients_only_into_logits(self):
        rng = np.random.default_rng(2)
        target = rng.normal(size=(TP, 2))
        loc = rng.normal(size=(1, 3, TP, 2))
        out = make_output(loc, np.ones((1, 3, TP, 2)), [[0.0, 0.1, 0.2]])
        terms = il_loss(out, target)
        g_loc, g_scale, g_pi = torch.autograd.grad(
            terms["classification"], [out.refined_loc, out.refined_scale, out.pi_logits],
            allow_unused=True,
        )
        assert g_loc is None or torch.all(g_loc == 0.0)
        assert g_scale is None or torch.all(g_scale == 0.0)
        assert g_pi is not None and float(g_pi.abs().sum()) > 0.0

    def test_losing_mode_gradients_exactly_zero(self):
        rng = np.random.default_rng(3)
        target = rng.normal(size=(TP, 2))
        loc = np.stack([target + 0.05, target + 30.0])[None]
        out = make_output(loc, np.ones((1, 2, TP, 2)), [[0.0, 0.0]])
        terms = il_loss(out, target)
        g_p, g_r = torch.autograd.grad(
            terms["proposal"] + terms["refinement"], [out.proposed_loc, out.refined_loc],
            allow_unused=True,
        )
        assert torch.all(g_p[0, 1] == 0.0)
        assert torch.all(g_r[0, 1] == 0.0)
        assert float(g_p[0, 0].abs().sum()) > 0.0

    def test_mas_off_preserves_ego_loss(self, follow_scenario, follow_window):
        mf = make_policy()
        out = mf.decode_modes(mf.encode_scene(follow_window))
        ego_target = follow_scenario.ego_track.positions[21:41]
        others = np.stack([t.positions[21:41] for t in follow_scenario.agent_tracks])
        on = il_loss_multi(out, ego_target, others, multi_agent=True)
        off = il_loss_multi(out, ego_target, others, multi_agent=False)
        assert float(on["ego"]) == pytest.approx(float(off["ego"]), abs=0.0)
        assert on["mas"] is not None and off["mas"] is None
        assert float(on["total"]) > float(off["total"]) - 1e-12


def test_il_smoke_convergence(follow_scenario):
    # 200 IL steps on a frozen toy batch cut the loss by at least half
    torch.manual_seed(0)
    mf = make_policy(seed=5)
    windows = [build_scene_window(follow_scenario, s, T) for s in (15, 25, 35)]
    targets = [follow_scenario.ego_track.positions[s + 1 : s + 1 + TP] for s in (15, 25, 35)]
    opt = torch.optim.AdamW(mf.parameters(), lr=3e-4)

    def batch_loss():
        total = 0.0
        for w, tgt in zip(windows, targets):
            out = mf.decode_modes(mf.encode_scene(w))
            total = total + il_loss(out, tgt)["total"]
        return total / len(windows)

    initial = float(batch_loss())
    for _ in range(200):
        opt.zero_grad()
        loss = batch_loss()
        loss.backward()
        opt.step()
    final = float(batch_loss())
    assert final <= 0.5 * initial
