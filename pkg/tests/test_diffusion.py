import numpy as np
import pytest
from scipy import stats

from glab.diffusion import NoiseSchedule, SamplerRng, ddim_step, forward_diffuse, reverse_sample

SCHED = NoiseSchedule()


class ConstantDenoiser:
    """Predicts a fixed value; distinguishes conditional vs pad-only calls."""

    def __init__(self, cond_value=0.7, uncond_value=0.1):
        self.cond_value = cond_value
        self.uncond_value = uncond_value
        self.calls = []

    def forward(self, z, t, tokens, hook=None):
        z = np.asarray(z, dtype=np.float64)
        tokens = np.asarray(tokens)
        out = np.empty_like(z)
        for row in range(tokens.shape[0]):
            is_uncond = bool((tokens[row] == 0).all())
            self.calls.append((int(np.atleast_1d(t)[0]), is_uncond))
            out[row] = self.uncond_value if is_uncond else self.cond_value
        return out


class AnalyticGaussianDenoiser:
    """Exact posterior-mean noise prediction for N(mu, sigma^2) scalar data."""

    def __init__(self, mu, sigma, schedule):
        self.mu = mu
        self.sigma = sigma
        self.schedule = schedule

    def forward(self, z, t, tokens, hook=None):
        ab = self.schedule.abar(int(np.atleast_1d(t)[0]))
        var = ab * self.sigma ** 2 + (1.0 - ab)
        return np.sqrt(1.0 - ab) * (np.asarray(z) - np.sqrt(ab) * self.mu) / var


def test_schedule_invariants():
    ab = SCHED.alpha_bar
    assert np.all(np.diff(ab) < 0)
    assert ab[0] > 0.99
    assert ab[-1] < 5e-3
    ts = SCHED.inference_ts
    assert len(ts) == 50
    assert np.all(np.diff(ts) > 0)
    assert ts[0] == 0 and ts[-1] < SCHED.t_train


def test_t0_mapping_rounds_down():
    assert SCHED.inference_ts[SCHED.t0_index(0.8)] == 800
    assert SCHED.t0_index(1.0) == 49
    assert SCHED.t0_index(0.0) == 0
    assert SCHED.t0_index(0.01) == 0
    assert SCHED.t0_index(0.02) == 1
    assert SCHED.inference_ts[SCHED.t0_index(0.841)] == 840
    with pytest.raises(ValueError):
        SCHED.t0_index(1.5)


def test_forward_diffuse_near_identity_at_t0():
    rng = SamplerRng(0)
    z0 = np.random.default_rng(1).normal(size=(4, 16, 16))
    z_t = forward_diffuse(z0, 0, SCHED, rng)
    assert np.linalg.norm(z_t - z0) / np.linalg.norm(z0) < 0.05


def test_forward_diffuse_pure_noise_at_end():
    rng = SamplerRng(0)
    gen = np.random.default_rng(2)
    cors = []
    for _ in range(20):
        z0 = gen.normal(size=(512,))
        z_t = forward_diffuse(z0, SCHED.t_train - 1, SCHED, rng)
        cors.append(np.corrcoef(z0, z_t)[0, 1])
    assert np.abs(np.mean(cors)) < 0.2


def test_forward_diffuse_second_moment_monte_carlo():
    z0 = np.random.default_rng(3).normal(size=(4, 4))
    t = 500
    ab = SCHED.abar(t)
    rng = SamplerRng(9)
    draws = np.array([np.sum(forward_diffuse(z0, t, SCHED, rng) ** 2) for _ in range(10_000)])
    expected = ab * np.sum(z0 ** 2) + (1.0 - ab) * z0.size
    assert abs(draws.mean() - expected) / expected < 0.02


def test_forward_diffuse_rejects_bad_t():
    rng = SamplerRng(0)
    with pytest.raises(ValueError):
        forward_diffuse(np.zeros(3), SCHED.t_train, SCHED, rng)
    with pytest.raises(ValueError):
        forward_diffuse(np.zeros(3), -1, SCHED, rng)


def test_unnoising_identity():
    gen = np.random.default_rng(4)
    z0 = gen.normal(size=(4, 8, 8))
    for t in (0, 137, 500, 999):
        ab = SCHED.abar(t)
        eps = gen.normal(size=z0.shape)
        z_t = np.sqrt(ab) * z0 + np.sqrt(1 - ab) * eps
        back = (z_t - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
        assert np.abs(back - z0).max() / np.abs(z0).max() < 1e-12


def test_renoising_residual_variance():
    # the re-noising step's residual z_t - sqrt(abar) z* has per-element
    # variance 1 - abar
    z_star = np.random.default_rng(5).normal(size=(4, 4))
    t = 700
    ab = SCHED.abar(t)
    rng = SamplerRng(11)
    residuals = np.stack([forward_diffuse(z_star, t, SCHED, rng) - np.sqrt(ab) * z_star
                          for _ in range(1000)])
    assert abs(residuals.var() - (1.0 - ab)) / (1.0 - ab) < 0.05


def test_ddim_cfg_endpoints():
    z = np.random.default_rng(6).normal(size=(1, 4))
    tokens = np.array([[1, 3, 0, 0, 0, 0, 0, 0]])
    t, t_prev = 400, 380
    ab_t, ab_p = SCHED.abar(t), SCHED.abar(t_prev)

    def manual(eps_val):
        z0_hat = (z - np.sqrt(1 - ab_t) * eps_val) / np.sqrt(ab_t)
        return np.sqrt(ab_p) * z0_hat + np.sqrt(1 - ab_p) * eps_val

    den = ConstantDenoiser()
    out0 = ddim_step(den, z, t, t_prev, tokens, alpha_cfg=0.0, schedule=SCHED)
    assert np.allclose(out0, manual(den.uncond_value))
    out1 = ddim_step(den, z, t, t_prev, tokens, alpha_cfg=1.0, schedule=SCHED)
    assert np.allclose(out1, manual(den.cond_value))
    out3 = ddim_step(den, z, t, t_prev, tokens, alpha_cfg=3.0, schedule=SCHED)
    blend = den.uncond_value + 3.0 * (den.cond_value - den.uncond_value)
    assert np.allclose(out3, manual(blend))


def test_ddim_rejects_non_monotone_steps():
    den = ConstantDenoiser()
    with pytest.raises(ValueError):
        ddim_step(den, np.zeros((1, 2)), 200, 400, np.zeros((1, 8), dtype=int), 1.0, SCHED)


def test_reverse_sample_from_analytic_score_lands_in_data_gaussian():
    mu, sigma = 0.4, 0.6
    den = AnalyticGaussianDenoiser(mu, sigma, SCHED)
    rng = SamplerRng(123)
    z_T = rng.normal((500,))
    z0 = reverse_sample(den, z_T, SCHED.n_inference - 1, np.zeros((1, 8), dtype=int),
                        alpha_cfg=1.0, schedule=SCHED)
    assert stats.kstest(z0, "norm", args=(mu, sigma)).pvalue > 0.01


def test_reverse_sample_deterministic_and_hook_identity():
    den = AnalyticGaussianDenoiser(0.0, 1.0, SCHED)
    z_T = SamplerRng(7).normal((16,))
    base = reverse_sample(den, z_T, 49, np.zeros((1, 8), dtype=int), 1.0, SCHED)
    again = reverse_sample(den, z_T.copy(), 49, np.zeros((1, 8), dtype=int), 1.0, SCHED)
    hooked = reverse_sample(den, z_T.copy(), 49, np.zeros((1, 8), dtype=int), 1.0, SCHED,
                            step_hook=lambda z, t: z)
    assert np.array_equal(base, again)
    assert np.array_equal(base, hooked)


def test_reverse_sample_step_count_and_progress():
    den = ConstantDenoiser()
    seen = []
    reverse_sample(den, np.zeros((1, 2)), 49, np.ones((1, 8), dtype=int), 1.0, SCHED,
                   progress=lambda i, n: seen.append((i, n)))
    assert seen[0] == (1, 50) and seen[-1] == (50, 50)
    assert len(den.calls) == 50  # alpha_cfg=1 -> one model call per step
    # states visited by the step hook are every timestep except the final output
    states = []
    reverse_sample(den, np.zeros((1, 2)), 3, np.ones((1, 8), dtype=int), 1.0, SCHED,
                   step_hook=lambda z, t: states.append(t))
    assert states == [40, 20, 0]
