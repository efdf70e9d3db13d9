import math

import numpy as np
import pytest

from ritp.noise import (
    NoiseParams,
    apply_clipped_trajectory_noise,
    apply_trajectory_noise,
    draw_clipped_noise_scalars,
    draw_noise_scalars,
)


def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _action(n=20, speed=5.0):
    t = 0.1 * np.arange(1, n + 1)
    return np.column_stack([speed * t, np.zeros(n)])


class TestTrajectoryNoise:
    def test_zero_beta_identity(self):
        a = _action()
        out = apply_trajectory_noise(a, (0.0, 0.0), 0.0, np.random.default_rng(0))
        assert np.array_equal(out, a)

    def test_final_offset_magnitude_is_eps(self):
        a = _action()
        rng = np.random.default_rng(1)
        eps = draw_noise_scalars(0.1, float(np.linalg.norm(a[-1])), np.random.default_rng(1))
        out = apply_trajectory_noise(a, (0.0, 0.0), 0.1, rng)
        assert np.linalg.norm(out[-1] - a[-1]) == pytest.approx(abs(float(eps)), abs=1e-12)

    def test_linear_profile_exact(self):
        a = _action()
        out = apply_trajectory_noise(a, (0.0, 0.0), 0.2, np.random.default_rng(5))
        offsets = out - a
        n = a.shape[0]
        final = offsets[-1]
        for j in range(n):
            assert np.allclose(offsets[j], (j + 1) / n * final, atol=1e-12)

    def test_offsets_collinear(self):
        a = _action()
        out = apply_trajectory_noise(a, (0.0, 0.0), 0.3, np.random.default_rng(9))
        offsets = out - a
        cross = offsets[:, 0] * offsets[-1, 1] - offsets[:, 1] * offsets[-1, 0]
        assert np.max(np.abs(cross)) < 1e-9

    def test_variance_monte_carlo(self):
        # beta=0.1, d=10 -> Var(eps) = 10; check E[|final offset|^2] within 3 SE
        beta, d, n = 0.1, 10.0, 100_000
        rng = np.random.default_rng(12)
        a = _action(speed=d / 2.0)  # final point at distance d from origin
        assert np.linalg.norm(a[-1]) == pytest.approx(d)
        sq = np.empty(n)
        for i in range(n):
            out = apply_trajectory_noise(a, (0.0, 0.0), beta, rng)
            sq[i] = np.sum((out[-1] - a[-1]) ** 2)
        target = beta * d * d
        se = target * np.sqrt(2.0 / n)
        assert abs(sq.mean() - target) < 3.0 * se

    def test_zero_displacement_returns_input(self):
        a = np.zeros((10, 2))
        out = apply_trajectory_noise(a, (0.0, 0.0), 0.5, np.random.default_rng(0))
        assert np.array_equal(out, a)

    def test_deterministic_under_seed(self):
        a = _action()
        o1 = apply_trajectory_noise(a, (0.0, 0.0), 0.1, np.random.default_rng(42))
        o2 = apply_trajectory_noise(a, (0.0, 0.0), 0.1, np.random.default_rng(42))
        assert np.array_equal(o1, o2)


class TestClippedNoise:
    def test_matches_unclipped_until_clip_event(self):
        a = _action()
        big_c = 1e9
        o1 = apply_trajectory_noise(a, (0.0, 0.0), 0.2, np.random.default_rng(3))
        o2 = apply_clipped_trajectory_noise(a, (0.0, 0.0), 0.2, big_c, np.random.default_rng(3))
        assert np.allclose(o1, o2, atol=0.0)

    def test_clip_bound_holds(self):
        d = 1.0
        rng = np.random.default_rng(7)
        eps = draw_clipped_noise_scalars(0.2, 0.5, d, rng, size=1_000_00)
        assert np.max(np.abs(eps)) <= 0.5 * d * d + 1e-15

    def test_clip_probability(self):
        # d=1, beta'=0.2, c=0.5: P(clip) = 2 Phi(-0.5/sqrt(0.2)) ~ 0.2636
        n = 1_000_000
        rng = np.random.default_rng(11)
        eps = draw_clipped_noise_scalars(0.2, 0.5, 1.0, rng, size=n)
        p_hat = np.mean(np.abs(eps) >= 0.5 - 1e-12)
        p = 2.0 * normal_cdf(-0.5 / np.sqrt(0.2))
        assert p == pytest.approx(0.26355, abs=2e-4)
        sigma = np.sqrt(p * (1 - p) / n)
        assert abs(p_hat - p) < 3.0 * sigma


def test_params_validation():
    with pytest.raises(ValueError):
        NoiseParams(beta=-0.1)
    with pytest.raises(ValueError):
        NoiseParams(clip_c=0.0)
