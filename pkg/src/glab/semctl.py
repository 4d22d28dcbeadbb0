"""Cross-attention region control and attention diagnostics.

A semantic region is (binary mask at image resolution, vocabulary label,
positive weight).  Control works by appending the labels to the prompt and
steering each label's post-softmax attention map toward the mask:

    steered = w * ((1 - kappa) * A + kappa * (B / ||B||_F) * ||A||_F)

with kappa = t / T decaying to zero as the reverse chain approaches the
clean latent.  The blend is applied to the named token's map only and the
rows are deliberately not renormalised afterwards, so the steered map keeps
the Frobenius mass ``w * ||A||_F`` at kappa = 1 exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .guidance import GuidanceConfig, SynthesisResult, SYNTH_METHODS
from .nets import ModelBundle
from .scenegen import MAX_TOKENS, VOCAB, Vocabulary

__all__ = [
    "SemanticRegion", "ControlSchedule", "RecordingAbsent", "PromptOverflow",
    "build_modified_prompt", "downsample_mask", "modify_attention",
    "make_control_hook", "controlled_synthesis", "attention_diagnostics",
    "save_heatmaps", "ATTN_RES",
]

ATTN_RES = 8
CONTROLLABLE_METHODS = ("gradop", "gradop+", "sdedit")


class PromptOverflow(ValueError):
    pass


class RecordingAbsent(RuntimeError):
    pass


@dataclass(frozen=True)
class SemanticRegion:
    """A steering target: where (mask), what (label), how strongly (weight)."""

    mask: np.ndarray          # (64,64) {0,1}
    label: str
    weight: float = 1.0

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.float64)
        if mask.shape != (64, 64):
            raise ValueError(f"region mask must be (64,64), got {mask.shape}")
        if not set(np.unique(mask)) <= {0.0, 1.0}:
            raise ValueError("region mask must be binary")
        if mask.sum() == 0:
            raise ValueError("region mask is empty")
        if not VOCAB.is_semantic(self.label):
            raise ValueError(f"label '{self.label}' is not a semantic token")
        if self.weight < 0:
            raise ValueError("region weight must be >= 0")
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class ControlSchedule:
    """kappa_t = t / T: full steering at the noisy end, none at the clean end."""

    t_train: int = 1000

    def kappa(self, t: int) -> float:
        if not 0 <= t <= self.t_train:
            raise ValueError(f"timestep {t} outside [0,{self.t_train}]")
        return t / self.t_train


def build_modified_prompt(base_ids, regions, vocab: Vocabulary = VOCAB) -> list[int]:
    """Append each region's label to the prompt, deduplicated, order kept."""
    ids = [int(i) for i in base_ids if int(i) != 0]
    for r in regions:
        idx = vocab.index(r.label)
        if idx not in ids:
            ids.append(idx)
    if len(ids) > MAX_TOKENS:
        raise PromptOverflow(f"{len(ids)} tokens exceed the limit of {MAX_TOKENS}")
    return ids + [0] * (MAX_TOKENS - len(ids))


def downsample_mask(mask: np.ndarray, res: int = ATTN_RES) -> np.ndarray:
    """Image-resolution mask -> attention resolution: average-pool then
    re-binarise at 0.5.  An all-zero result is an error (nothing to steer)."""
    mask = np.asarray(mask, dtype=np.float64)
    h, w = mask.shape
    k = h // res
    pooled = mask.reshape(res, k, res, k).mean(axis=(1, 3))
    binary = (pooled >= 0.5).astype(np.float64)
    if binary.sum() == 0:
        raise ValueError("mask vanished at attention resolution (zero norm)")
    return binary


def modify_attention(a_map: np.ndarray, mask_attn: np.ndarray, weight: float,
                     kappa: float) -> np.ndarray:
    """Steer one token's post-softmax map toward the mask (no renormalising)."""
    a_map = np.asarray(a_map, dtype=np.float64)
    mask_attn = np.asarray(mask_attn, dtype=np.float64)
    if a_map.shape != mask_attn.shape:
        raise ValueError(f"map {a_map.shape} vs mask {mask_attn.shape}")
    b_norm = float(np.sqrt((mask_attn ** 2).sum()))
    if b_norm == 0.0:
        raise ValueError("mask has zero norm")
    a_norm = float(np.sqrt((a_map ** 2).sum()))
    return weight * ((1.0 - kappa) * a_map + kappa * (mask_attn / b_norm) * a_norm)


def make_control_hook(token_ids, regions, schedule: ControlSchedule = ControlSchedule(),
                      recorder: list | None = None):
    """Attention hook steering every region's token; optionally records the
    post-steering maps per step.  Returns None when there is nothing to do so
    hookless fast paths stay reachable."""
    targets = []
    seq = [int(i) for i in np.asarray(token_ids).reshape(-1)]
    for r in regions:
        tok = VOCAB.index(r.label)
        if tok not in seq:
            raise ValueError(f"region label '{r.label}' missing from the prompt; "
                             "build the prompt with build_modified_prompt first")
        targets.append((seq.index(tok), downsample_mask(r.mask), r.weight))
    if not targets and recorder is None:
        return None

    def hook(layer_id: str, t: int, maps: np.ndarray):
        out = maps
        if targets:
            out = maps.copy()
            kappa = schedule.kappa(t)
            for pos, mask_attn, weight in targets:
                out[pos] = modify_attention(maps[pos], mask_attn, weight, kappa)
        if recorder is not None:
            recorder.append((int(t), out.copy()))
        return out if targets else None

    return hook


def controlled_synthesis(models: ModelBundle, y, base_token_ids, regions, method: str,
                         cfg: GuidanceConfig, record_attention: bool = False,
                         progress=None) -> SynthesisResult:
    """Run a guidance method with region steering wired into cross-attention."""
    if method not in CONTROLLABLE_METHODS:
        raise ValueError(f"method '{method}' does not support semantic control "
                         f"(use one of {CONTROLLABLE_METHODS})")
    token_ids = build_modified_prompt(base_token_ids, regions)
    recorder: list | None = [] if record_attention else None
    hook = make_control_hook(token_ids, regions,
                             ControlSchedule(models.schedule.t_train), recorder)
    result = SYNTH_METHODS[method](models, y, token_ids, cfg,
                                   progress=progress, attn_hook=hook)
    return dataclasses.replace(result, attention_record=recorder)


def attention_diagnostics(result: SynthesisResult, token_ids=None) -> dict[int, np.ndarray]:
    """Head-and-step averaged per-token maps, normalised to [0,1].

    Keys are prompt positions; pass the token-id sequence to key by token id
    instead.  Requires the synthesis to have recorded attention.
    """
    if not result.attention_record:
        raise RecordingAbsent("synthesis ran without attention recording")
    stacked = np.stack([maps for _, maps in result.attention_record])  # (S,L,8,8)
    mean_maps = stacked.mean(axis=0)
    out: dict[int, np.ndarray] = {}
    for pos in range(mean_maps.shape[0]):
        m = mean_maps[pos]
        span = m.max() - m.min()
        norm = (m - m.min()) / span if span > 0 else np.zeros_like(m)
        key = pos if token_ids is None else int(np.asarray(token_ids).reshape(-1)[pos])
        out[key] = norm
    return out


def save_heatmaps(diagnostics: dict[int, np.ndarray], directory, upscale: int = 16,
                  vocab: Vocabulary = VOCAB) -> list[Path]:
    """Export each diagnostic map as a grayscale PNG heatmap."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for key, m in diagnostics.items():
        big = np.kron(m, np.ones((upscale, upscale)))
        name = vocab.token(key) if key < vocab.table_size else str(key)
        p = directory / f"attn_{name}.png"
        Image.fromarray((np.clip(big, 0, 1) * 255).astype(np.uint8), mode="L").save(p)
        paths.append(p)
    return paths
