"""Hyperparameter grid search behind the GuidanceConfig defaults.

Sweeps (gamma, lr) for the guided objective, the inversion level for the
post-hoc method, and the in-chain window for the injected method, against a
small painting/seed grid, and prints mean faithfulness F and realism R per
cell.  Run after training a stack:

    python3 scripts/grid_search.py --checkpoints .cache/desk --paintings 3 --seeds 8

Chosen defaults (recorded in glab.guidance.GuidanceConfig):
  gamma=1e-3  lr=5e-2  window=[0.1, 0.5]  (gradop benchmark cells: t0=0.4)
"""

import argparse
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from glab.diffusion import SamplerRng, reverse_sample
from glab.guidance import GuidanceConfig, SYNTH_METHODS
from glab.metrics import FeatureExtractor, faithfulness, realism
from glab.nets import ModelBundle
from glab.scenegen import VOCAB, make_dataset

MODELS = None
FLATS = None


def _init(checkpoints, n_paintings):
    global MODELS, FLATS
    MODELS = ModelBundle.load(checkpoints)
    _, _, test = make_dataset(1280, seed=11)
    FLATS = [s for s in test if s.domain == "flat"][:n_paintings]


def _text_job(args):
    pi, seed = args
    s = FLATS[pi]
    toks = VOCAB.encode("photo", s.objects)
    cfg = GuidanceConfig(seed=seed * 10_007 + pi)
    rng = SamplerRng(cfg.seed)
    z = rng.normal((1, 4, 16, 16))
    z0 = reverse_sample(MODELS.denoiser, z, 49, np.asarray(toks)[None],
                        cfg.alpha_cfg, MODELS.schedule)
    return MODELS.ae.decode_np(z0)[0]


def _method_job(args):
    method, overrides, pi, seed = args
    s = FLATS[pi]
    toks = VOCAB.encode("photo", s.objects)
    cfg = GuidanceConfig(seed=seed * 10_007 + pi).merged(**overrides)
    res = SYNTH_METHODS[method](MODELS, s.painting, toks, cfg)
    return res.image, faithfulness(res.image, s.painting)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoints", required=True)
    ap.add_argument("--paintings", type=int, default=3)
    ap.add_argument("--seeds", type=int, default=8)
    ap.add_argument("--workers", type=int, default=2)
    args = ap.parse_args()

    _init(args.checkpoints, args.paintings)
    seeds = range(args.seeds)
    grid_pi = range(args.paintings)
    ex = FeatureExtractor()

    with ProcessPoolExecutor(args.workers, initializer=_init,
                             initargs=(args.checkpoints, args.paintings)) as pool:
        text_imgs = list(pool.map(_text_job, [(pi, sd) for pi in grid_pi for sd in seeds]))

        def evaluate(method, overrides):
            jobs = [(method, overrides, pi, sd) for pi in grid_pi for sd in seeds]
            out = list(pool.map(_method_job, jobs))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                r = realism([o[0] for o in out], text_imgs, extractor=ex)
            return float(np.mean([o[1] for o in out])), float(r)

        print("# sdedit reference curve")
        for t0 in (0.2, 0.4, 0.6, 0.8, 1.0):
            f, r = evaluate("sdedit", {"t0": t0})
            print(f"sdedit t0={t0}: F={f:6.1f} R={r:6.2f}")

        print("# post-hoc method: (gamma, lr) x inversion level")
        for gamma in (1e-2, 1e-3, 0.0):
            for lr in (5e-2, 1.5e-1):
                for t0 in (0.4, 0.8):
                    f0, _ = evaluate("gradop", {"m": 0, "t0": t0, "gamma": gamma, "lr": lr})
                    f1, r1 = evaluate("gradop", {"m": 40, "t0": t0, "gamma": gamma, "lr": lr})
                    print(f"gradop g={gamma} lr={lr} t0={t0}: "
                          f"F {f0:5.1f} -> {f1:5.1f} (gap {f0 - f1:+5.1f}) R={r1:5.2f}")

        print("# injected method: window x steps x lr")
        for (ts, te) in ((0.7, 0.3), (0.9, 0.5), (0.5, 0.1), (0.6, 0.2)):
            for m in (1, 2, 3):
                f, r = evaluate("gradop+", {"t_start": ts, "t_end": te, "m": m})
                print(f"gradop+ w=[{te},{ts}] m={m}: F={f:6.1f} R={r:6.2f}")


if __name__ == "__main__":
    main()
