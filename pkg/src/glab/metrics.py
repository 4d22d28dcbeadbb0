"""Faithfulness and realism metrics plus the benchmark harness.

Faithfulness compares the painted output against the reference painting with
an RMS distance on the 0-255 scale, always through the metric painting
function (median + adaptive palette), never the differentiable one used for
optimisation.  Realism is the Frechet distance between random-conv features
of guided outputs and text-only outputs of the same prompts, after a light
augmentation pass (horizontal flips and 7/8 resized crops) that restores
some of the layout diversity the painting conditioning removes.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .guidance import GuidanceConfig, SYNTH_METHODS
from .nets import ModelBundle
from .painting import paint_sdedit

__all__ = [
    "FeatureExtractor", "MetricReport", "MethodPoint", "faithfulness", "fid",
    "augment_images", "realism", "run_benchmark", "sdedit_sweep_points",
    "write_report", "plot_tradeoff",
]

FEATURE_DIM = 64


class FeatureExtractor:
    """Frozen random 4-layer strided conv net: (3,64,64) image -> 64-dim feature.

    No training anywhere: the fixed seed pins the weights forever, which keeps
    every report reproducible and is plenty to separate the two scene domains.
    """

    def __init__(self, seed: int = 0xF1D):
        rng = np.random.default_rng([seed, 0xFEA7])
        chans = [3, 16, 32, 64, FEATURE_DIM]
        self.kernels = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            self.kernels.append(rng.normal(0.0, np.sqrt(2.0 / (cin * 9)), (cout, cin, 3, 3)))

    def __call__(self, images: np.ndarray) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        x = x - 0.5
        for w in self.kernels:
            x = _conv_s2(x, w)
            x = np.tanh(x)
        return x.mean(axis=(2, 3))


def _conv_s2(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.zeros((B, C, H + 2, W + 2))
    xp[:, :, 1:H + 1, 1:W + 1] = x
    sB, sC, sH, sW = xp.strides
    Ho, Wo = H // 2, W // 2
    win = np.lib.stride_tricks.as_strided(
        xp, (B, Ho, Wo, C, kh, kw), (sB, sH * 2, sW * 2, sC, sH, sW), writeable=False)
    cols = win.reshape(B * Ho * Wo, C * kh * kw)
    return np.ascontiguousarray((cols @ w.reshape(O, -1).T)
                                .reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))


def faithfulness(x: np.ndarray, y: np.ndarray) -> float:
    """RMS distance between paint(x) and y on the 0-255 scale."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    painted = paint_sdedit(x)
    return float(np.sqrt(np.mean((painted - y) ** 2)) * 255.0)


def fid(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    The matrix square root comes from the symmetric eigendecomposition of
    S_a^1/2 S_b S_a^1/2; eigenvalues below -1e-8 are an error, small negative
    jitter is clamped.  Sets too small to estimate a full-rank covariance get
    a 1e-6 diagonal ridge and a warning.
    """
    fa = np.asarray(features_a, dtype=np.float64)
    fb = np.asarray(features_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2 or len(fa) < 2 or len(fb) < 2:
        raise ValueError("need at least 2 feature rows per side")
    d = fa.shape[1]
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.cov(fa, rowvar=False)
    cov_b = np.cov(fb, rowvar=False)
    if len(fa) < d + 1 or len(fb) < d + 1:
        warnings.warn(f"covariance from fewer than {d + 1} samples; adding 1e-6 ridge")
        cov_a = cov_a + 1e-6 * np.eye(d)
        cov_b = cov_b + 1e-6 * np.eye(d)

    def _psd_clamp(vals, side):
        if vals.min() < -1e-8:
            raise ArithmeticError(f"covariance eigenvalue {vals.min():.3e} < -1e-8 ({side})")
        return np.clip(vals, 0.0, None)

    va, ua = np.linalg.eigh(cov_a)
    sqrt_a = (ua * np.sqrt(_psd_clamp(va, "A"))) @ ua.T
    inner = sqrt_a @ cov_b @ sqrt_a
    vi = np.linalg.eigvalsh(inner)
    tr_sqrt = np.sqrt(_psd_clamp(vi, "sqrt")).sum()
    diff = float(((mu_a - mu_b) ** 2).sum())
    return float(diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)


CROP_SIZE = 56      # 7/8 of the 64 px frame


def _resize_bilinear(img: np.ndarray, out: int) -> np.ndarray:
    """(C,h,w) -> (C,out,out) separable bilinear resize."""
    c, h, w = img.shape
    def axis_weights(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        lo = np.clip(np.floor(pos).astype(int), 0, n_in - 1)
        hi = np.clip(lo + 1, 0, n_in - 1)
        frac = np.clip(pos - lo, 0.0, 1.0)
        return lo, hi, frac
    lo, hi, fr = axis_weights(h, out)
    img = img[:, lo, :] * (1 - fr)[None, :, None] + img[:, hi, :] * fr[None, :, None]
    lo, hi, fr = axis_weights(w, out)
    return img[:, :, lo] * (1 - fr)[None, None, :] + img[:, :, hi] * fr[None, None, :]


def augment_images(images: Sequence[np.ndarray], rng: np.random.Generator) -> np.ndarray:
    """Per-sample random horizontal flip + random resized crop at 7/8 scale."""
    out = []
    size = images[0].shape[-1]
    for img in images:
        img = np.asarray(img, dtype=np.float64)
        if rng.random() < 0.5:
            img = img[:, :, ::-1]
        max_off = size - CROP_SIZE
        oy = int(rng.integers(0, max_off + 1))
        ox = int(rng.integers(0, max_off + 1))
        crop = img[:, oy:oy + CROP_SIZE, ox:ox + CROP_SIZE]
        out.append(_resize_bilinear(crop, size))
    return np.stack(out)


def realism(outputs: Sequence[np.ndarray], text_only: Sequence[np.ndarray],
            augment: bool = True, aug_seed: int = 0,
            extractor: Optional[FeatureExtractor] = None) -> float:
    """Frechet feature distance of guided outputs to text-only outputs."""
    if len(outputs) == 0 or len(text_only) == 0:
        raise ValueError("both image sets must be nonempty")
    ex = extractor or FeatureExtractor()
    a = np.stack([np.asarray(i, dtype=np.float64) for i in outputs])
    b = np.stack([np.asarray(i, dtype=np.float64) for i in text_only])
    if augment:
        rng = np.random.default_rng([aug_seed, 0xA06])
        a = augment_images(a, rng)
        b = augment_images(b, rng)
    return fid(ex(a), ex(b))


# ---------------------------------------------------------------------------
# benchmark harness


@dataclass(frozen=True)
class MethodSpec:
    """One benchmark cell: a method name plus its config overrides."""
    name: str
    label: str
    overrides: dict = field(default_factory=dict)


def sdedit_sweep_points(t0_values=(0.2, 0.4, 0.6, 0.8, 1.0)) -> list[MethodSpec]:
    return [MethodSpec("sdedit", f"sdedit@t0={v}", {"t0": v}) for v in t0_values]


@dataclass
class MethodPoint:
    label: str
    method: str
    overrides: dict
    f_mean: float
    f_per_sample: list[float]
    r: float
    n: int


@dataclass
class MetricReport:
    points: list[MethodPoint]
    seeds: list[int]
    n_paintings: int
    config_hash: str
    base_config: dict
    duration: float


_WORKER_MODELS: Optional[ModelBundle] = None
_WORKER_DIR: Optional[str] = None


def _worker_init(models_dir: str):
    global _WORKER_MODELS, _WORKER_DIR
    try:
        # one BLAS thread per worker; the pool owns the parallelism
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:
        pass
    _WORKER_DIR = models_dir
    _WORKER_MODELS = ModelBundle.load(models_dir)


def _run_one(job) -> tuple[int, np.ndarray, float]:
    """(job_index, painting, tokens, method|None, cfg) -> output image + F."""
    global _WORKER_MODELS
    idx, y, tokens, method, cfg = job
    if _WORKER_MODELS is None:   # serial fallback
        raise RuntimeError("worker not initialised")
    models = _WORKER_MODELS
    if method is None:
        from .diffusion import SamplerRng, reverse_sample
        rng = SamplerRng(cfg.seed)
        z_T = rng.normal((1, 4, 16, 16))
        z0 = reverse_sample(models.denoiser, z_T, models.schedule.n_inference - 1,
                            np.asarray(tokens)[None], cfg.alpha_cfg, models.schedule)
        img = models.ae.decode_np(z0)[0]
        return idx, img, float("nan")
    res = SYNTH_METHODS[method](models, y, tokens, cfg)
    return idx, res.image, faithfulness(res.image, y)


def run_benchmark(models_dir, paintings: Sequence[np.ndarray],
                  token_seqs: Sequence[Sequence[int]], specs: Sequence[MethodSpec],
                  seeds: Sequence[int], base_config: Optional[GuidanceConfig] = None,
                  workers: int = 4, log=None) -> MetricReport:
    """Synthesize every (spec, painting, seed) cell, plus the text-only pool,
    and report per-method mean faithfulness and pooled realism."""
    t_begin = time.perf_counter()
    base = base_config or GuidanceConfig()
    if not Path(models_dir, "autoencoder.glab").exists():
        raise FileNotFoundError(f"missing checkpoints under {models_dir}")
    jobs = []
    meta = []
    for si, spec in enumerate([None] + list(specs)):
        for pi, (y, toks) in enumerate(zip(paintings, token_seqs)):
            for seed in seeds:
                cfg = base.merged(seed=int(seed * 10_007 + pi))
                if spec is None:
                    jobs.append((len(jobs), None, np.asarray(toks), None, cfg))
                else:
                    cfg = cfg.merged(**spec.overrides)
                    jobs.append((len(jobs), np.asarray(y), np.asarray(toks), spec.name, cfg))
                meta.append((si, pi, seed))

    results: dict[int, tuple[np.ndarray, float]] = {}
    workers = max(1, min(workers, os.cpu_count() or 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(str(models_dir),)) as pool:
            for idx, img, f in pool.map(_run_one, jobs, chunksize=1):
                results[idx] = (img, f)
                if log and len(results) % 50 == 0:
                    log(f"benchmark {len(results)}/{len(jobs)}")
    else:
        _worker_init(str(models_dir))
        for job in jobs:
            idx, img, f = _run_one(job)
            results[idx] = (img, f)
            if log and len(results) % 50 == 0:
                log(f"benchmark {len(results)}/{len(jobs)}")

    by_spec: dict[int, list[tuple[np.ndarray, float]]] = {}
    for idx, (si, pi, seed) in enumerate(meta):
        by_spec.setdefault(si, []).append(results[idx])

    text_only = [img for img, _ in by_spec[0]]
    extractor = FeatureExtractor()
    points = []
    for si, spec in enumerate(specs, start=1):
        imgs = [img for img, _ in by_spec[si]]
        fs = [f for _, f in by_spec[si]]
        r = realism(imgs, text_only, augment=True, aug_seed=0, extractor=extractor)
        points.append(MethodPoint(label=spec.label, method=spec.name,
                                  overrides=dict(spec.overrides),
                                  f_mean=float(np.mean(fs)), f_per_sample=list(map(float, fs)),
                                  r=float(r), n=len(imgs)))
        if log:
            log(f"{spec.label}: F={points[-1].f_mean:.2f} R={points[-1].r:.3f}")

    cfg_hash = hashlib.sha256(json.dumps(
        {"base": asdict(base), "specs": [asdict(s) for s in specs],
         "seeds": list(map(int, seeds)), "n_paintings": len(paintings)},
        sort_keys=True).encode()).hexdigest()[:16]
    return MetricReport(points=points, seeds=list(map(int, seeds)),
                        n_paintings=len(paintings), config_hash=cfg_hash,
                        base_config=asdict(base),
                        duration=time.perf_counter() - t_begin)


def write_report(report: MetricReport, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    js = out_dir / "report.json"
    js.write_text(json.dumps({
        "config_hash": report.config_hash,
        "seeds": report.seeds,
        "n_paintings": report.n_paintings,
        "duration_s": report.duration,
        "base_config": report.base_config,
        "points": [asdict(p) for p in report.points],
    }, indent=1))
    csv = out_dir / "report.csv"
    lines = ["label,method,F_mean,R,n"]
    for p in report.points:
        lines.append(f"{p.label},{p.method},{p.f_mean:.4f},{p.r:.5f},{p.n}")
    csv.write_text("\n".join(lines) + "\n")
    return {"json": js, "csv": csv}


def plot_tradeoff(report: MetricReport, path) -> Path:
    """F-vs-R scatter, one series per method family."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    groups: dict[str, list[MethodPoint]] = {}
    for p in report.points:
        groups.setdefault(p.method, []).append(p)
    for method, pts in groups.items():
        fs = [p.f_mean for p in pts]
        rs = [p.r for p in pts]
        ax.plot(fs, rs, "o-" if len(pts) > 1 else "o", label=method)
        for p in pts:
            ax.annotate(p.label.split("@")[-1], (p.f_mean, p.r), fontsize=7)
    ax.set_xlabel("faithfulness F (lower = closer to painting)")
    ax.set_ylabel("realism R (lower = closer to text-only)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
