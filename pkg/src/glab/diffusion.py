"""Noise schedule, stochastic forward diffusion, deterministic DDIM reverse.

The reverse chain follows the usual 50-step accounting: one denoiser step per
inference timestep, counting the final step at t=0 which projects straight to
the clean latent (its "previous" cumulative alpha is exactly 1).  A chain
started at inference index i therefore runs i+1 steps, and a full chain from
pure noise runs exactly ``n_inference`` steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["NoiseSchedule", "SamplerRng", "forward_diffuse", "ddim_step", "reverse_sample"]


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule with an evenly strided inference subsequence."""

    t_train: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    n_inference: int = 50
    betas: np.ndarray = field(init=False, repr=False)
    alpha_bar: np.ndarray = field(init=False, repr=False)
    inference_ts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.linspace(self.beta_start, self.beta_end, self.t_train)
        alpha_bar = np.cumprod(1.0 - betas)
        if self.t_train % self.n_inference:
            raise ValueError("t_train must be a multiple of n_inference")
        stride = self.t_train // self.n_inference
        ts = np.arange(self.n_inference) * stride
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bar", alpha_bar)
        object.__setattr__(self, "inference_ts", ts)

    def check(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.t_train:
            raise ValueError(f"timestep {t} outside [0,{self.t_train})")
        return t

    def abar(self, t: int) -> float:
        return float(self.alpha_bar[self.check(t)])

    def t0_index(self, t0: float) -> int:
        """Map a noise level t0 in [0,1] to an inference index, rounding down."""
        if not 0.0 <= t0 <= 1.0:
            raise ValueError(f"t0={t0} outside [0,1]")
        target = t0 * self.t_train
        idx = int(np.searchsorted(self.inference_ts, target, side="right")) - 1
        return max(0, min(idx, self.n_inference - 1))

    def level(self, t: int) -> float:
        """Noise level of a training timestep, in [0,1)."""
        return self.check(t) / self.t_train


class SamplerRng:
    """Seeded Gaussian stream; same seed, same draws."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.default_rng(self.seed)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)


def forward_diffuse(z0: np.ndarray, t: int, schedule: NoiseSchedule, rng: SamplerRng) -> np.ndarray:
    """z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps, eps ~ N(0, I)."""
    ab = schedule.abar(t)
    eps = rng.normal(np.shape(z0))
    return np.sqrt(ab) * np.asarray(z0) + np.sqrt(1.0 - ab) * eps


def _as_np(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _cfg_eps(denoiser, z, t, tokens, alpha_cfg, attn_hook=None):
    """eps_u + alpha*(eps_c - eps_u); skips whichever branch the blend drops.

    Attention hooks pin the conditional branch to its own forward pass; with
    no hook the two branches share one stacked pass.
    """
    tokens = np.asarray(tokens)
    uncond = np.zeros_like(tokens)
    if alpha_cfg == 1.0:
        return _as_np(denoiser.forward(z, t, tokens, hook=attn_hook))
    if alpha_cfg == 0.0:
        return _as_np(denoiser.forward(z, t, uncond))
    if attn_hook is None and np.asarray(z).shape[0] == 1 and tokens.shape[0] == 1:
        z2 = np.concatenate([np.asarray(z)] * 2)
        both = denoiser.forward(z2, t, np.concatenate([tokens, uncond]))
        both = _as_np(both)
        eps_c, eps_u = both[:1], both[1:]
    else:
        eps_c = denoiser.forward(z, t, tokens, hook=attn_hook)
        eps_u = denoiser.forward(z, t, uncond)
        eps_c = _as_np(eps_c)
        eps_u = _as_np(eps_u)
    return eps_u + alpha_cfg * (eps_c - eps_u)


def ddim_step(denoiser, z_t: np.ndarray, t: int, t_prev: int, tokens, alpha_cfg: float,
              schedule: NoiseSchedule, attn_hook=None) -> np.ndarray:
    """One deterministic (eta=0) reverse step t -> t_prev.

    ``t_prev`` of -1 marks the final step: the clean-latent prediction is
    returned as-is (cumulative alpha 1).
    """
    t = schedule.check(t)
    if t_prev != -1:
        t_prev = schedule.check(t_prev)
        if t_prev >= t:
            raise ValueError(f"non-monotone timesteps: {t} -> {t_prev}")
    eps = _as_np(_cfg_eps(denoiser, z_t, t, tokens, alpha_cfg, attn_hook))
    ab_t = schedule.abar(t)
    z0_hat = (z_t - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
    if t_prev == -1:
        return z0_hat
    ab_p = schedule.abar(t_prev)
    return np.sqrt(ab_p) * z0_hat + np.sqrt(1.0 - ab_p) * eps


def reverse_sample(denoiser, z_start: np.ndarray, start_idx: int, tokens, alpha_cfg: float,
                   schedule: NoiseSchedule, step_hook=None, attn_hook=None,
                   progress=None) -> np.ndarray:
    """Chain ddim_step from inference index ``start_idx`` down to the clean latent.

    ``step_hook(z, t) -> z or None`` runs after each intermediate step with
    the state's timestep, and may replace the latent (guided methods hook in
    here).  It never runs after the final step.
    """
    if not 0 <= start_idx < schedule.n_inference:
        raise ValueError(f"start_idx {start_idx} outside inference subsequence")
    ts = schedule.inference_ts
    z = np.asarray(z_start, dtype=np.float64)
    total = start_idx + 1
    for n, i in enumerate(range(start_idx, -1, -1)):
        t = int(ts[i])
        t_prev = int(ts[i - 1]) if i > 0 else -1
        z = ddim_step(denoiser, z, t, t_prev, tokens, alpha_cfg, schedule, attn_hook)
        if progress is not None:
            progress(n + 1, total)
        if t_prev != -1 and step_hook is not None:
            replaced = step_hook(z, t_prev)
            if replaced is not None:
                z = np.asarray(replaced, dtype=np.float64)
    return z
