"""The toy latent-diffusion stack: autoencoder, conditional denoiser, training.

The denoiser is a three-resolution U-Net (16 -> 8 -> 4) over 4x16x16 latents
with sinusoidal time embeddings and a single cross-attention block at 8x8
attending over learned token embeddings (4 heads, 32-dim keys/queries).

Cross-attention exposes a hook: after the softmax, the hook receives the
head-averaged map of every token as an (L, 8, 8) array and may return a
replacement; tokens whose returned map is bit-identical to the input are left
untouched per head, so a pass-through hook changes nothing.  Replacement is
only legal outside a gradient tape (it edits raw arrays).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .diffusion import NoiseSchedule
from .scenegen import MAX_TOKENS, VOCAB
from .tensor import Adam, GraphError, Tape, Tensor, load_checkpoint, save_checkpoint

__all__ = [
    "Autoencoder", "Denoiser", "ModelBundle", "TrainingDiverged",
    "denoise", "train_autoencoder", "train_denoiser", "sinusoidal_embedding",
    "ATTN_LAYER_ID",
]

LATENT_SHAPE = (4, 16, 16)
EMB_DIM = 64
N_HEADS = 4
HEAD_DIM = 32
ATTN_LAYER_ID = "xattn8"

AttentionHook = Callable[[str, int, np.ndarray], Optional[np.ndarray]]


class TrainingDiverged(RuntimeError):
    pass


def sinusoidal_embedding(t, dim: int = EMB_DIM) -> np.ndarray:
    """Classic sin/cos position features of integer timesteps, shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / (half - 1))
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _conv_init(rng, o, c, k, gain=1.0):
    std = gain * np.sqrt(2.0 / (c * k * k))
    return rng.normal(0.0, std, (o, c, k, k))


def _linear_init(rng, i, o, gain=1.0):
    return rng.normal(0.0, gain * np.sqrt(1.0 / i), (i, o))


class _Module:
    """Named-parameter container with checkpoint I/O."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def _p(self, name: str, arr: np.ndarray) -> Tensor:
        t = Tensor(arr, requires_grad=True)
        self.params[name] = t
        return t

    def save(self, path) -> None:
        save_checkpoint(path, self.params)

    def load_state(self, path) -> None:
        state = load_checkpoint(path)
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, arr in state.items():
            if arr.shape != self.params[k].data.shape:
                raise ValueError(f"shape mismatch for '{k}': {arr.shape} vs {self.params[k].data.shape}")
            self.params[k].data = arr.copy()

    def _conv(self, x, name, stride=1):
        return T.conv2d(x, self.params[f"{name}.w"], bias=self.params[f"{name}.b"], stride=stride)

    def _gn(self, x, name, groups=8):
        return T.group_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"], groups)


# nearest-upsample x2 followed by this fixed depthwise kernel is exactly a
# factor-2 bilinear interpolation; the border is renormalised by the kernel
# mass inside the frame so constants stay constant
_BILINEAR_K = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0])[None, None] / 16.0
_BILINEAR_W: dict[tuple[int, int], np.ndarray] = {}


def bilinear_up2(x) -> Tensor:
    """Differentiable 2x bilinear upsample of (B,C,H,W)."""
    x = T.astensor(x)
    B, C, H, W = x.data.shape
    key = (2 * H, 2 * W)
    weight = _BILINEAR_W.get(key)
    if weight is None:
        ones = np.ones((1, 1) + key)
        weight = T.conv2d(Tensor(ones), Tensor(_BILINEAR_K)).data
        _BILINEAR_W[key] = weight
    up = T.upsample_nearest(x, 2)
    flat = T.reshape(up, (B * C, 1, 2 * H, 2 * W))
    smoothed = T.conv2d(flat, Tensor(_BILINEAR_K))
    renorm = T.mul(smoothed, Tensor(np.broadcast_to(1.0 / weight, smoothed.data.shape).copy()))
    return T.reshape(renorm, (B, C, 2 * H, 2 * W))


class Autoencoder(_Module):
    """Deterministic conv autoencoder: 3x64x64 image <-> 4x16x16 latent.

    The encoder ends in tanh so latents live in [-1, 1]; the decoder ends in
    a sigmoid so decoded images live in [0, 1].  The last decoder stage is a
    fixed bilinear upsample, which keeps every learned conv at 32x32 or
    below (the 64x64 convs would dominate the whole synthesis loop).
    """

    def __init__(self, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng([seed, 0xAE])
        for name, (o, c, k) in {
            "enc.c1": (16, 3, 3), "enc.c2": (32, 16, 3), "enc.c3": (32, 32, 3),
            "enc.c4": (4, 32, 3),
            "dec.c1": (48, 4, 3), "dec.c2": (32, 48, 3), "dec.c3": (24, 32, 3),
            "dec.c4": (3, 24, 3),
        }.items():
            self._p(f"{name}.w", _conv_init(rng, o, c, k))
            self._p(f"{name}.b", np.zeros(o))

    def encode(self, x) -> Tensor:
        h = T.silu(self._conv(T.astensor(x), "enc.c1", stride=2))
        h = T.silu(self._conv(h, "enc.c2", stride=2))
        h = T.silu(self._conv(h, "enc.c3"))
        return T.tanh(self._conv(h, "enc.c4"))

    def decode(self, z) -> Tensor:
        h = T.silu(self._conv(T.astensor(z), "dec.c1"))
        h = T.silu(self._conv(h, "dec.c2"))
        h = T.silu(self._conv(T.upsample_nearest(h, 2), "dec.c3"))
        h = self._conv(h, "dec.c4")
        return T.sigmoid(bilinear_up2(h))

    def encode_np(self, x) -> np.ndarray:
        return self.encode(np.asarray(x, dtype=np.float64)).data

    def decode_np(self, z) -> np.ndarray:
        return self.decode(np.asarray(z, dtype=np.float64)).data


class Denoiser(_Module):
    """Conditional noise predictor over latents, one cross-attention block."""

    channels = (32, 48, 64)

    def __init__(self, seed: int = 0, vocab_size: int = VOCAB.table_size):
        super().__init__()
        rng = np.random.default_rng([seed, 0xD3])
        c1, c2, c3 = self.channels
        self._p("emb.table", rng.normal(0.0, 0.02, (vocab_size, EMB_DIM)))
        self._p("temb.l1.w", _linear_init(rng, EMB_DIM, EMB_DIM))
        self._p("temb.l1.b", np.zeros(EMB_DIM))
        self._p("temb.l2.w", _linear_init(rng, EMB_DIM, EMB_DIM))
        self._p("temb.l2.b", np.zeros(EMB_DIM))
        self._p("conv_in.w", _conv_init(rng, c1, LATENT_SHAPE[0], 3))
        self._p("conv_in.b", np.zeros(c1))
        for name, ch in (("res1", c1), ("res2", c2), ("res3", c3), ("res4", c2), ("res5", c1)):
            self._p(f"{name}.gn1.g", np.ones(ch))
            self._p(f"{name}.gn1.b", np.zeros(ch))
            self._p(f"{name}.c1.w", _conv_init(rng, ch, ch, 3))
            self._p(f"{name}.c1.b", np.zeros(ch))
            self._p(f"{name}.t.w", _linear_init(rng, EMB_DIM, ch))
            self._p(f"{name}.t.b", np.zeros(ch))
            self._p(f"{name}.gn2.g", np.ones(ch))
            self._p(f"{name}.gn2.b", np.zeros(ch))
            self._p(f"{name}.c2.w", _conv_init(rng, ch, ch, 3, gain=0.1))
            self._p(f"{name}.c2.b", np.zeros(ch))
        self._p("down1.w", _conv_init(rng, c2, c1, 3))
        self._p("down1.b", np.zeros(c2))
        self._p("down2.w", _conv_init(rng, c3, c2, 3))
        self._p("down2.b", np.zeros(c3))
        self._p("up1.w", _conv_init(rng, c2, c3, 3))
        self._p("up1.b", np.zeros(c2))
        self._p("up2.w", _conv_init(rng, c1, c2, 3))
        self._p("up2.b", np.zeros(c1))
        inner = N_HEADS * HEAD_DIM
        self._p("attn.gn.g", np.ones(c2))
        self._p("attn.gn.b", np.zeros(c2))
        self._p("attn.wq", _linear_init(rng, c2, inner))
        self._p("attn.wk", _linear_init(rng, EMB_DIM, inner))
        self._p("attn.wv", _linear_init(rng, EMB_DIM, inner))
        self._p("attn.wo", _linear_init(rng, inner, c2, gain=0.1))
        self._p("attn.wo_b", np.zeros(c2))
        self._p("out.gn.g", np.ones(c1))
        self._p("out.gn.b", np.zeros(c1))
        self._p("out.w", _conv_init(rng, LATENT_SHAPE[0], c1, 3, gain=0.1))
        self._p("out.b", np.zeros(LATENT_SHAPE[0]))

    def _res(self, x, name, temb):
        h = self._conv(T.silu(self._gn(x, f"{name}.gn1")), f"{name}.c1")
        proj = T.bias_add(T.matmul(temb, self.params[f"{name}.t.w"]), self.params[f"{name}.t.b"])
        h = T.channel_add(h, proj)
        h = self._conv(T.silu(self._gn(h, f"{name}.gn2")), f"{name}.c2")
        return T.add(x, h)

    def _attention(self, x, token_ids, t_scalar, hook):
        B, C, H, W = x.data.shape
        hw = H * W
        inner = N_HEADS * HEAD_DIM
        hn = self._gn(x, "attn.gn")
        seq = T.transpose(T.reshape(hn, (B, C, hw)), (0, 2, 1))          # (B,HW,C)
        q = T.matmul(T.reshape(seq, (B * hw, C)), self.params["attn.wq"])
        q = T.reshape(T.transpose(T.reshape(q, (B, hw, N_HEADS, HEAD_DIM)), (0, 2, 1, 3)),
                      (B * N_HEADS, hw, HEAD_DIM))
        emb = T.embed(self.params["emb.table"], token_ids)                # (B,L,E)
        L = token_ids.shape[1]
        kv_in = T.reshape(emb, (B * L, EMB_DIM))
        k = T.reshape(T.transpose(T.reshape(T.matmul(kv_in, self.params["attn.wk"]),
                                            (B, L, N_HEADS, HEAD_DIM)), (0, 2, 1, 3)),
                      (B * N_HEADS, L, HEAD_DIM))
        v = T.reshape(T.transpose(T.reshape(T.matmul(kv_in, self.params["attn.wv"]),
                                            (B, L, N_HEADS, HEAD_DIM)), (0, 2, 1, 3)),
                      (B * N_HEADS, L, HEAD_DIM))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(HEAD_DIM))
        attn = T.softmax(scores)                                          # (B*h,HW,L)

        if hook is not None:
            if B != 1:
                raise ValueError("attention hooks only support single-sample forward passes")
            maps = attn.data.reshape(N_HEADS, hw, L).mean(axis=0).T.reshape(L, H, W)
            replacement = hook(ATTN_LAYER_ID, int(t_scalar), maps)
            if replacement is not None:
                replacement = np.asarray(replacement, dtype=np.float64)
                if replacement.shape != maps.shape:
                    raise ValueError(f"hook returned shape {replacement.shape}, expected {maps.shape}")
                changed = [i for i in range(L) if not np.array_equal(replacement[i], maps[i])]
                if changed and attn.requires_grad:
                    raise GraphError("attention replacement is not differentiable")
                for i in changed:
                    attn.data[:, :, i] = replacement[i].reshape(-1)[None, :]

        out = T.matmul(attn, v)                                           # (B*h,HW,dh)
        out = T.reshape(T.transpose(T.reshape(out, (B, N_HEADS, hw, HEAD_DIM)), (0, 2, 1, 3)),
                        (B * hw, inner))
        out = T.bias_add(T.matmul(out, self.params["attn.wo"]), self.params["attn.wo_b"])
        out = T.transpose(T.reshape(out, (B, hw, C)), (0, 2, 1))
        return T.add(x, T.reshape(out, (B, C, H, W)))

    def forward(self, z, t, token_ids, hook: Optional[AttentionHook] = None) -> Tensor:
        """Predict the noise in z_t. z: (B,4,16,16); t: int or (B,) ints."""
        z = T.astensor(z)
        if z.data.ndim != 4 or z.data.shape[1:] != LATENT_SHAPE:
            raise T.ShapeError(f"denoiser expects (B,{LATENT_SHAPE}), got {z.data.shape}")
        token_ids = np.asarray(token_ids)
        if token_ids.ndim == 1:
            token_ids = token_ids[None, :]
        if token_ids.shape != (z.data.shape[0], MAX_TOKENS):
            raise T.ShapeError(f"token ids must be (B,{MAX_TOKENS}), got {token_ids.shape}")
        t_arr = np.broadcast_to(np.atleast_1d(t), (z.data.shape[0],))
        temb = Tensor(sinusoidal_embedding(t_arr))
        temb = T.bias_add(T.matmul(temb, self.params["temb.l1.w"]), self.params["temb.l1.b"])
        temb = T.bias_add(T.matmul(T.silu(temb), self.params["temb.l2.w"]), self.params["temb.l2.b"])

        h1 = self._res(self._conv(z, "conv_in"), "res1", temb)
        d1 = self._conv(h1, "down1", stride=2)
        d1 = self._attention(d1, token_ids, t_arr[0], hook)
        d1 = self._res(d1, "res2", temb)
        d2 = self._res(self._conv(d1, "down2", stride=2), "res3", temb)
        u1 = self._conv(T.upsample_nearest(d2, 2), "up1")
        u1 = self._res(T.add(u1, d1), "res4", temb)
        u2 = self._conv(T.upsample_nearest(u1, 2), "up2")
        u2 = self._res(T.add(u2, h1), "res5", temb)
        return self._conv(T.silu(self._gn(u2, "out.gn")), "out")


def denoise(denoiser: Denoiser, z_t, t, token_ids, hook: Optional[AttentionHook] = None) -> np.ndarray:
    """Single no-grad denoiser evaluation; the hook sees exactly one map set."""
    return denoiser.forward(z_t, t, token_ids, hook=hook).data


# ---------------------------------------------------------------------------
# training


def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class ModelBundle:
    ae: Autoencoder
    denoiser: Denoiser
    schedule: NoiseSchedule
    hashes: dict[str, str]

    @classmethod
    def load(cls, directory, schedule: Optional[NoiseSchedule] = None) -> "ModelBundle":
        directory = Path(directory)
        ae_path = directory / "autoencoder.glab"
        den_path = directory / "denoiser.glab"
        for p in (ae_path, den_path):
            if not p.exists():
                raise FileNotFoundError(f"missing checkpoint: {p}")
        ae = Autoencoder()
        ae.load_state(ae_path)
        den = Denoiser()
        den.load_state(den_path)
        return cls(ae=ae, denoiser=den, schedule=schedule or NoiseSchedule(),
                   hashes={"autoencoder": _file_hash(ae_path), "denoiser": _file_hash(den_path)})

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.ae.save(directory / "autoencoder.glab")
        self.denoiser.save(directory / "denoiser.glab")


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def train_autoencoder(train_samples, val_samples, epochs: int, lr: float = 2e-3,
                      seed: int = 0, batch_size: int = 16, log=None) -> tuple[Autoencoder, dict]:
    """MSE-reconstruction training; returns the model and a loss history."""
    ae = Autoencoder(seed=seed)
    if epochs == 0:
        return ae, {"train": [], "val": []}
    rng = np.random.default_rng([seed, 0x7AE])
    images = np.stack([s.image for s in train_samples])
    val_images = np.stack([s.image for s in val_samples]) if val_samples else None
    opt = Adam(ae.params, lr=lr)
    history = {"train": [], "val": []}
    for epoch in range(epochs):
        losses = []
        for idx in _batches(len(images), batch_size, rng):
            x = images[idx]
            opt.zero_grad()
            try:
                with Tape() as tape:
                    loss = T.mse(ae.decode(ae.encode(x)), Tensor(x))
                    tape.backward(loss)
            except T.NonFiniteError as e:
                raise TrainingDiverged(f"autoencoder loss diverged at epoch {epoch}: {e}") from e
            opt.step()
            losses.append(loss.item())
        history["train"].append(float(np.mean(losses)))
        if val_images is not None:
            history["val"].append(reconstruction_mse(ae, val_images))
        if log:
            log(f"ae epoch {epoch + 1}/{epochs} train={history['train'][-1]:.5f}"
                + (f" val={history['val'][-1]:.5f}" if val_images is not None else ""))
    return ae, history


def reconstruction_mse(ae: Autoencoder, images: np.ndarray, batch_size: int = 32) -> float:
    errs = []
    for i in range(0, len(images), batch_size):
        x = images[i:i + batch_size]
        errs.append(float(((ae.decode_np(ae.encode_np(x)) - x) ** 2).mean()))
    return float(np.mean(errs))


def train_denoiser(train_samples, val_samples, ae: Autoencoder, schedule: NoiseSchedule,
                   epochs: int, lr: float = 1e-3, cond_dropout: float = 0.1,
                   seed: int = 0, batch_size: int = 16, log=None) -> tuple[Denoiser, dict]:
    """Noise-prediction training with token dropout for the unconditional branch."""
    den = Denoiser(seed=seed)
    rng = np.random.default_rng([seed, 0x7D3])
    z0 = np.concatenate([ae.encode_np(np.stack([s.image for s in train_samples[i:i + 32]]))
                         for i in range(0, len(train_samples), 32)])
    tokens = np.array([s.tokens for s in train_samples], dtype=np.int64)
    if val_samples:
        z0_val = np.concatenate([ae.encode_np(np.stack([s.image for s in val_samples[i:i + 32]]))
                                 for i in range(0, len(val_samples), 32)])
        tokens_val = np.array([s.tokens for s in val_samples], dtype=np.int64)
    opt = Adam(den.params, lr=lr)
    history = {"train": [], "val": []}

    def noised(z, t_arr, eps):
        ab = schedule.alpha_bar[t_arr][:, None, None, None]
        return np.sqrt(ab) * z + np.sqrt(1.0 - ab) * eps

    for epoch in range(epochs):
        losses = []
        for idx in _batches(len(z0), batch_size, rng):
            z = z0[idx]
            toks = tokens[idx].copy()
            drop = rng.random(len(idx)) < cond_dropout
            toks[drop] = 0
            t_arr = rng.integers(0, schedule.t_train, len(idx))
            eps = rng.standard_normal(z.shape)
            opt.zero_grad()
            try:
                with Tape() as tape:
                    loss = T.mse(den.forward(noised(z, t_arr, eps), t_arr, toks), Tensor(eps))
                    tape.backward(loss)
            except T.NonFiniteError as e:
                raise TrainingDiverged(f"denoiser loss diverged at epoch {epoch}: {e}") from e
            opt.step()
            losses.append(loss.item())
        history["train"].append(float(np.mean(losses)))
        if val_samples:
            vrng = np.random.default_rng([seed, 0xE7A1, epoch])
            t_arr = vrng.integers(0, schedule.t_train, len(z0_val))
            eps = vrng.standard_normal(z0_val.shape)
            verr = []
            for i in range(0, len(z0_val), batch_size):
                sl = slice(i, i + batch_size)
                pred = den.forward(noised(z0_val[sl], t_arr[sl], eps[sl]), t_arr[sl], tokens_val[sl]).data
                verr.append(float(((pred - eps[sl]) ** 2).mean()))
            history["val"].append(float(np.mean(verr)))
        if log:
            log(f"denoiser epoch {epoch + 1}/{epochs} train={history['train'][-1]:.4f}"
                + (f" val={history['val'][-1]:.4f}" if val_samples else ""))
    return den, history
