"""Guided synthesis methods: gradient-optimised guidance and inversion baselines.

All methods share the same contract: given a reference painting ``y`` in
[0,1], a padded token-id sequence, and a :class:`GuidanceConfig`, they return
a :class:`SynthesisResult` whose image is exactly the decode of its final
latent.  Everything is deterministic given (seed, config, y, tokens).

The two gradient methods minimise, in latent space,

    paint_loss(decode(z), y) + gamma * ||z - z_anchor||_2

with Adam; the anchor norm is the plain Euclidean norm (not squared), so its
gradient is the unit direction away from the anchor.  ``gradop`` optimises a
finished text-only sample and re-inverts it through the diffusion at noise
level ``t0``; ``gradop_plus`` injects the same optimisation into the single
reverse pass whenever the current noise level falls inside
[t_end, t_start], re-noising the optimised latent back to its step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .diffusion import NoiseSchedule, SamplerRng, forward_diffuse, reverse_sample
from .nets import LATENT_SHAPE, ModelBundle
from .painting import extract_palette, paint_gaussian, paint_quantize_diff
from .tensor import Adam, Tape, Tensor

__all__ = ["GuidanceConfig", "SynthesisResult", "InvalidConfig", "sdedit",
           "loopback", "ilvr", "gradop", "gradop_plus", "SYNTH_METHODS"]


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceConfig:
    """Every knob of every method; unused fields are ignored per method."""

    # gamma, lr and the window come from scripts/grid_search.py on the desk
    # stack; t0 = 0.8 is the standard inversion level for the baselines
    gamma: float = 1e-3        # latent anchor weight
    lr: float = 5e-2           # optimiser step size
    m: int = 40                # gradient steps per optimisation
    t0: float = 0.8            # inversion noise level
    t_start: float = 0.5       # in-chain optimisation window, noisy end
    t_end: float = 0.1         # in-chain optimisation window, clean end
    alpha_cfg: float = 3.0     # classifier-free guidance blend
    n_iter: int = 4            # loopback iterations
    k: float = 1.05            # loopback t0 growth factor
    n_ilvr: int = 4            # low-pass downscale factor
    seed: int = 0
    opt_paint: str = "gaussian"   # differentiable painting: gaussian | quantize

    def __post_init__(self):
        if not (0.0 <= self.t_end <= self.t_start <= 1.0):
            raise InvalidConfig(f"window must satisfy 0 <= t_end <= t_start <= 1, "
                                f"got t_end={self.t_end}, t_start={self.t_start}")
        if not (0.0 <= self.t0 <= 1.0):
            raise InvalidConfig(f"t0={self.t0} outside [0,1]")
        if self.m < 0:
            raise InvalidConfig("m must be >= 0")
        if self.gamma < 0:
            raise InvalidConfig("gamma must be >= 0")
        if self.n_ilvr < 1:
            raise InvalidConfig("n_ilvr must be >= 1")
        if self.n_iter < 1:
            raise InvalidConfig("n_iter must be >= 1")
        if self.opt_paint not in ("gaussian", "quantize"):
            raise InvalidConfig(f"unknown differentiable painting '{self.opt_paint}'")

    def merged(self, **overrides) -> "GuidanceConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **overrides)


@dataclass
class SynthesisResult:
    image: np.ndarray                    # (3,64,64), exactly decode(z0)
    z0: np.ndarray                       # final latent
    losses: list[float]                  # one entry per optimisation step
    duration: float                      # wall-clock seconds
    method: str
    seed: int
    attention_record: Optional[list] = None   # [(t, (L,8,8) maps), ...]
    steps: int = 0                       # denoiser reverse steps executed


def _check_painting(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (3, 64, 64):
        raise ValueError(f"painting must be (3,64,64), got {y.shape}")
    if y.min() < -1e-9 or y.max() > 1 + 1e-9:
        raise ValueError("painting values must lie in [0,1]")
    return np.clip(y, 0.0, 1.0)


def _token_array(token_ids) -> np.ndarray:
    arr = np.asarray(token_ids, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def _paint_loss_fn(cfg: GuidanceConfig, y: np.ndarray) -> Callable[[Tensor], Tensor]:
    y_t = Tensor(y)
    if cfg.opt_paint == "quantize":
        palette = extract_palette(y)

        def loss(img):
            return T.mse(paint_quantize_diff(img, palette), y_t)
    else:
        def loss(img):
            return T.mse(paint_gaussian(img), y_t)
    return loss


def _optimise_latent(models: ModelBundle, z_init: np.ndarray, anchor: np.ndarray,
                     paint_loss, cfg: GuidanceConfig, trace: list[float]) -> np.ndarray:
    """Run cfg.m Adam steps of the guided objective around a fixed anchor."""
    z = Tensor(z_init.copy(), requires_grad=True)
    anchor_t = Tensor(anchor.copy())
    opt = Adam({"z": z}, lr=cfg.lr)
    for _ in range(cfg.m):
        opt.zero_grad()
        try:
            with Tape() as tape:
                img = T.reshape(models.ae.decode(z), (3, 64, 64))
                total = T.add(paint_loss(img),
                              T.scale(T.frobenius_norm(T.sub(z, anchor_t)), cfg.gamma))
                tape.backward(total)
        except T.NonFiniteError as e:
            raise T.NonFiniteError(
                f"guided optimisation diverged at step {len(trace)}; "
                f"last losses={trace[-5:]}") from e
        trace.append(float(total.data))
        opt.step()
    return z.data.copy()


def _finish(method, cfg, z0, models, losses, t_begin, steps, attn_rec=None) -> SynthesisResult:
    image = models.ae.decode_np(z0[None])[0]
    return SynthesisResult(image=image, z0=z0.copy(), losses=losses,
                           duration=time.perf_counter() - t_begin, method=method,
                           seed=cfg.seed, attention_record=attn_rec, steps=steps)


def _sdedit_chain(models, z_y, t0, tokens, cfg, rng, progress=None, attn_hook=None):
    """Noise the latent to level t0, then run the reverse chain down."""
    sched = models.schedule
    idx = sched.t0_index(t0)
    z_t = forward_diffuse(z_y, int(sched.inference_ts[idx]), sched, rng)
    z0 = reverse_sample(models.denoiser, z_t, idx, tokens, cfg.alpha_cfg, sched,
                        progress=progress, attn_hook=attn_hook)
    return z0, idx + 1


def sdedit(models: ModelBundle, y, token_ids, cfg: GuidanceConfig,
           progress=None, attn_hook=None) -> SynthesisResult:
    """Inversion baseline: start the reverse chain from the noised painting."""
    t_begin = time.perf_counter()
    y = _check_painting(y)
    tokens = _token_array(token_ids)
    rng = SamplerRng(cfg.seed)
    z_y = models.ae.encode_np(y[None])
    z0, steps = _sdedit_chain(models, z_y, cfg.t0, tokens, cfg, rng, progress, attn_hook)
    return _finish("sdedit", cfg, z0[0], models, [], t_begin, steps)


def loopback_t0_schedule(t0: float, k: float, n_iter: int) -> list[float]:
    """Noise levels per iteration: t0 <- min(t0 * k, 1.0) after each pass."""
    out = []
    for _ in range(n_iter):
        out.append(t0)
        t0 = min(t0 * k, 1.0)
    return out


def loopback(models: ModelBundle, y, token_ids, cfg: GuidanceConfig,
             progress=None, attn_hook=None) -> SynthesisResult:
    """Iterated sdedit: feed each output back with a growing noise level."""
    t_begin = time.perf_counter()
    y = _check_painting(y)
    tokens = _token_array(token_ids)
    rng = SamplerRng(cfg.seed)
    current = y
    steps = 0
    z0 = None
    for t0 in loopback_t0_schedule(cfg.t0, cfg.k, cfg.n_iter):
        z_y = models.ae.encode_np(current[None])
        z0, n = _sdedit_chain(models, z_y, t0, tokens, cfg, rng, progress, attn_hook)
        steps += n
        current = models.ae.decode_np(z0)[0]
    return _finish("loopback", cfg, z0[0], models, [], t_begin, steps)


def _low_pass(v: np.ndarray, n: int) -> np.ndarray:
    """Average-pool by n then nearest-upsample back.

    The block mean is computed as anchor + mean(deviations), which is exact
    on constant blocks whatever numpy's reduction tree does; applying the
    filter twice is therefore bitwise idempotent for every n.
    """
    B, C, H, W = v.shape
    if H % n or W % n:
        raise InvalidConfig(f"low-pass factor {n} must divide the image side {H}")
    r = v.reshape(B, C, H // n, n, W // n, n)
    anchor = r[:, :, :, 0, :, 0]
    pooled = anchor + (r - anchor[:, :, :, None, :, None]).mean(axis=(3, 5))
    return pooled.repeat(n, axis=2).repeat(n, axis=3)


def ilvr(models: ModelBundle, y, token_ids, cfg: GuidanceConfig,
         progress=None, attn_hook=None) -> SynthesisResult:
    """Low-frequency guidance: every step, replace the coarse structure of the
    decoded sample with the matching noised painting's coarse structure."""
    t_begin = time.perf_counter()
    y = _check_painting(y)
    tokens = _token_array(token_ids)
    sched = models.schedule
    rng = SamplerRng(cfg.seed)
    z_y = models.ae.encode_np(y[None])
    z_T = rng.normal((1,) + z_y.shape[1:])

    def refine(z, t):
        z_yt = forward_diffuse(z_y, t, sched, rng)
        y_t = models.ae.decode_np(z_yt)
        x_t = models.ae.decode_np(z)
        # grouped so the n=1 endpoint (phi = identity) overrides exactly
        x_blend = _low_pass(y_t, cfg.n_ilvr) + (x_t - _low_pass(x_t, cfg.n_ilvr))
        return models.ae.encode_np(np.clip(x_blend, 0.0, 1.0))

    z0 = reverse_sample(models.denoiser, z_T, sched.n_inference - 1, tokens,
                        cfg.alpha_cfg, sched, step_hook=refine,
                        progress=progress, attn_hook=attn_hook)
    return _finish("ilvr", cfg, z0[0], models, [], t_begin, sched.n_inference)


def gradop(models: ModelBundle, y, token_ids, cfg: GuidanceConfig,
           progress=None, attn_hook=None) -> SynthesisResult:
    """Optimise a finished text-only sample toward the painting, then re-invert."""
    t_begin = time.perf_counter()
    y = _check_painting(y)
    tokens = _token_array(token_ids)
    sched = models.schedule
    rng = SamplerRng(cfg.seed)
    paint_loss = _paint_loss_fn(cfg, y)

    z_T = rng.normal((1,) + LATENT_SHAPE)
    z_txt = reverse_sample(models.denoiser, z_T, sched.n_inference - 1, tokens,
                           cfg.alpha_cfg, sched, progress=progress, attn_hook=attn_hook)
    x_txt = models.ae.decode_np(z_txt)
    z_anchor = models.ae.encode_np(x_txt)       # re-encoded, not the raw chain output

    losses: list[float] = []
    z_star = _optimise_latent(models, z_anchor, z_anchor, paint_loss, cfg, losses)

    idx = sched.t0_index(cfg.t0)
    z_t0 = forward_diffuse(z_star, int(sched.inference_ts[idx]), sched, rng)
    z0 = reverse_sample(models.denoiser, z_t0, idx, tokens, cfg.alpha_cfg, sched,
                        progress=progress, attn_hook=attn_hook)
    return _finish("gradop", cfg, z0[0], models, losses, t_begin,
                   sched.n_inference + idx + 1)


def gradop_plus(models: ModelBundle, y, token_ids, cfg: GuidanceConfig,
                progress=None, attn_hook=None) -> SynthesisResult:
    """Single reverse pass with the guided optimisation injected in-window.

    After each reverse step that lands at a strictly positive timestep whose
    noise level is inside [t_end, t_start], the latent is optimised around
    itself and then re-noised back to that timestep.
    """
    t_begin = time.perf_counter()
    y = _check_painting(y)
    tokens = _token_array(token_ids)
    sched = models.schedule
    rng = SamplerRng(cfg.seed)
    paint_loss = _paint_loss_fn(cfg, y)
    losses: list[float] = []

    def window_hook(z, t):
        if t <= 0 or not (cfg.t_end <= sched.level(t) <= cfg.t_start) or cfg.m == 0:
            return None
        z_star = _optimise_latent(models, z, z, paint_loss, cfg, losses)
        return forward_diffuse(z_star, t, sched, rng)

    z_T = rng.normal((1,) + LATENT_SHAPE)
    z0 = reverse_sample(models.denoiser, z_T, sched.n_inference - 1, tokens,
                        cfg.alpha_cfg, sched, step_hook=window_hook,
                        progress=progress, attn_hook=attn_hook)
    return _finish("gradop+", cfg, z0[0], models, losses, t_begin, sched.n_inference)


SYNTH_METHODS = {
    "sdedit": sdedit,
    "loopback": loopback,
    "ilvr": ilvr,
    "gradop": gradop,
    "gradop+": gradop_plus,
}
