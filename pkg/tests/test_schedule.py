import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invi.schedule import (
    LatentFrame,
    make_schedule,
    forward_sample,
    ddim_step,
    ddim_invert_step,
    ddim_invert_trajectory,
)


def rand_latent(rng, shape=(4, 4, 4), t=0):
    return LatentFrame(rng.standard_normal(shape), frame_index=1, timestep=t)


class TestMakeSchedule:
    def test_single_step(self):
        sched = make_schedule(1, 0.5, 0.5, "linear")
        assert sched.alpha.tolist() == [0.5]
        assert sched.alpha_bar.tolist() == [0.5]

    def test_constant_schedule_exact_powers(self):
        sched = make_schedule(3, 0.1, 0.1, "linear")
        np.testing.assert_allclose(sched.alpha_bar, [0.9, 0.81, 0.729], rtol=0, atol=1e-15)

    def test_scaled_linear_matches_cumprod_oracle(self):
        sched = make_schedule(1000, 0.00085, 0.012, "scaled_linear")
        # Independent oracle: rebuild the variance grid and accumulate the
        # product one step at a time.
        roots = np.linspace(math.sqrt(0.00085), math.sqrt(0.012), 1000)
        acc = 1.0
        expected = []
        for r in roots:
            acc *= 1.0 - r * r
            expected.append(acc)
        np.testing.assert_array_equal(sched.alpha_bar, np.array(expected))

    def test_alpha_bar_recursion_exact(self):
        sched = make_schedule(50, 0.001, 0.02, "linear")
        for t in range(2, 51):
            assert sched.alpha_bar_at(t) == sched.alpha_bar_at(t - 1) * sched.alpha[t - 1]

    @pytest.mark.parametrize("kwargs", [
        dict(T=0, beta_start=0.1, beta_end=0.2),
        dict(T=10, beta_start=0.0, beta_end=0.2),
        dict(T=10, beta_start=0.1, beta_end=1.0),
        dict(T=10, beta_start=0.3, beta_end=0.2),
    ])
    def test_rejects_bad_parameters(self, kwargs):
        with pytest.raises(ValueError):
            make_schedule(**kwargs)

    def test_rejects_unknown_spacing(self):
        with pytest.raises(ValueError, match="spacing"):
            make_schedule(10, 0.1, 0.2, "cosine")

    @given(T=st.integers(1, 200), b0=st.floats(1e-5, 0.4), spread=st.floats(0.0, 0.4))
    @settings(max_examples=50, deadline=None)
    def test_alpha_bar_strictly_decreasing(self, T, b0, spread):
        sched = make_schedule(T, b0, min(b0 + spread, 0.9), "linear")
        assert np.all(np.diff(sched.alpha_bar) < 0) or T == 1

    def test_inference_timesteps_uniform_stride(self):
        sched = make_schedule(1000, 0.00085, 0.012)
        grid = sched.inference_timesteps(50)
        assert len(grid) == 50
        assert grid[-1] == 1000
        assert len(set(np.diff(grid).tolist())) == 1


class TestForwardSample:
    def test_near_zero_beta_returns_x0(self):
        sched = make_schedule(5, 1e-12, 1e-12, "linear")
        rng = np.random.default_rng(0)
        x0, noise = rand_latent(rng), rand_latent(rng)
        out = forward_sample(x0, 3, noise, sched)
        np.testing.assert_allclose(out.data, x0.data, atol=1e-5)
        assert out.timestep == 3

    def test_zero_signal_scales_noise_by_half(self):
        # One step with alpha_bar = 0.75: zero input gives 0.5 * noise.
        sched = make_schedule(1, 0.25, 0.25, "linear")
        rng = np.random.default_rng(1)
        x0 = LatentFrame(np.zeros((4, 4, 4)))
        noise = rand_latent(rng)
        out = forward_sample(x0, 1, noise, sched)
        np.testing.assert_allclose(out.data, 0.5 * noise.data, atol=1e-15)

    def test_matches_stepwise_kernel_with_shared_noise(self):
        # Oracle: iterate the per-step kernel, accumulating the signal
        # coefficient and the noise variance recursion v_t = a_t v_{t-1} + b_t,
        # realizing the total noise with one shared draw.
        sched = make_schedule(20, 0.01, 0.2, "linear")
        rng = np.random.default_rng(2)
        x0, noise = rand_latent(rng), rand_latent(rng)
        signal, var = 1.0, 0.0
        for t in range(1, 13):
            a = sched.alpha[t - 1]
            signal *= math.sqrt(a)
            var = a * var + sched.beta[t - 1]
        expected = signal * x0.data + math.sqrt(var) * noise.data
        out = forward_sample(x0, 12, noise, sched)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_rejects_out_of_range_t_and_shape_mismatch(self):
        sched = make_schedule(5, 0.1, 0.2, "linear")
        rng = np.random.default_rng(3)
        x0, noise = rand_latent(rng), rand_latent(rng)
        with pytest.raises(ValueError):
            forward_sample(x0, 0, noise, sched)
        with pytest.raises(ValueError):
            forward_sample(x0, 6, noise, sched)
        small = LatentFrame(np.zeros((2, 2, 4)))
        with pytest.raises(ValueError, match="shape"):
            forward_sample(x0, 1, small, sched)


class TestDdimSteps:
    def setup_method(self):
        self.sched = make_schedule(50, 0.001, 0.05, "linear")
        self.rng = np.random.default_rng(4)

    def test_zero_eps_step_is_signal_rescale(self):
        z = rand_latent(self.rng, t=10)
        eps = LatentFrame(np.zeros((4, 4, 4)))
        out = ddim_step(z, eps, 10, 4, self.sched)
        ratio = math.sqrt(self.sched.alpha_bar_at(4) / self.sched.alpha_bar_at(10))
        np.testing.assert_allclose(out.data, ratio * z.data, atol=1e-14)

    def test_zero_eps_invert_is_signal_rescale(self):
        z = rand_latent(self.rng, t=10)
        eps = LatentFrame(np.zeros((4, 4, 4)))
        out = ddim_invert_step(z, eps, 10, 20, self.sched)
        ratio = math.sqrt(self.sched.alpha_bar_at(20) / self.sched.alpha_bar_at(10))
        np.testing.assert_allclose(out.data, ratio * z.data, atol=1e-14)

    def test_invert_then_step_round_trip(self):
        for _ in range(10):
            z = rand_latent(self.rng, t=7)
            eps = rand_latent(self.rng)
            up = ddim_invert_step(z, eps, 7, 8, self.sched)
            back = ddim_step(up, eps, 8, 7, self.sched)
            np.testing.assert_allclose(back.data, z.data, atol=1e-6)

    def test_zero_eps_signal_norm_decay_exact(self):
        x0 = rand_latent(self.rng)
        eps = LatentFrame(np.zeros((4, 4, 4)))
        z = ddim_invert_step(x0, eps, 0, 30, self.sched)
        expected = math.sqrt(self.sched.alpha_bar_at(30)) * np.linalg.norm(x0.data)
        assert np.linalg.norm(z.data) == pytest.approx(expected, rel=1e-12)

    def test_rejects_non_monotone_timesteps(self):
        z = rand_latent(self.rng, t=5)
        eps = LatentFrame(np.zeros((4, 4, 4)))
        with pytest.raises(ValueError):
            ddim_step(z, eps, 5, 5, self.sched)
        with pytest.raises(ValueError):
            ddim_invert_step(z, eps, 5, 5, self.sched)
        with pytest.raises(ValueError):
            ddim_invert_step(z, eps, 5, 3, self.sched)


class TestInvertTrajectory:
    def setup_method(self):
        self.sched = make_schedule(10, 0.01, 0.1, "linear")
        self.rng = np.random.default_rng(5)

    def test_zero_eps_closed_form(self):
        x0 = rand_latent(self.rng)
        row = ddim_invert_trajectory(x0, lambda z: np.zeros(z.shape), self.sched)
        for t in range(1, 11):
            expected = math.sqrt(self.sched.alpha_bar_at(t)) * x0.data
            np.testing.assert_allclose(row.at(t).data, expected, atol=1e-12)

    def test_single_step_schedule(self):
        sched = make_schedule(1, 0.1, 0.1, "linear")
        x0 = rand_latent(self.rng)
        row = ddim_invert_trajectory(x0, lambda z: np.zeros(z.shape), sched)
        assert row.timesteps == [1]

    def test_constant_eps_matches_hand_iteration(self):
        x0 = rand_latent(self.rng)
        const = self.rng.standard_normal((4, 4, 4))
        row = ddim_invert_trajectory(x0, lambda z: const, self.sched)
        z = x0.data
        for t in range(1, 11):
            a_prev = self.sched.alpha_bar_at(t - 1)
            a_next = self.sched.alpha_bar_at(t)
            z = (math.sqrt(a_next) * (z - math.sqrt(1 - a_prev) * const)
                 / math.sqrt(a_prev) + math.sqrt(1 - a_next) * const)
            np.testing.assert_allclose(row.at(t).data, z, atol=1e-12)

    def test_requires_clean_input(self):
        x = rand_latent(self.rng, t=3)
        with pytest.raises(ValueError, match="t=0"):
            ddim_invert_trajectory(x, lambda z: np.zeros(z.shape), self.sched)
