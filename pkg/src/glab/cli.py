"""Command-line entry point: data generation, training, synthesis, eval, serve.

Every artifact-producing command embeds (config hash, seed, git describe) in
its JSON metadata so any output can be traced back to the exact invocation.
Flags override config-file values.  Exit codes: 1 invalid config, 2 missing
files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import subprocess
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .diffusion import NoiseSchedule
from .guidance import GuidanceConfig, InvalidConfig, SYNTH_METHODS
from .scenegen import VOCAB, load_dataset, make_dataset, save_dataset


class ConfigError(ValueError):
    pass


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
        return out.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _load_config_file(path, allowed: set[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    data = json.loads(p.read_text())
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; allowed: {sorted(allowed)}")
    return data


def _meta(cfg_dict: dict, seed: int) -> dict:
    return {"config": cfg_dict, "config_hash": _config_hash(cfg_dict),
            "seed": seed, "git": _git_describe()}


def _load_png(path) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"painting not found: {p}")
    img = Image.open(p).convert("RGB")
    if img.size != (64, 64):
        raise ConfigError(f"painting must be 64x64, got {img.size}")
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


def _save_png(path, arr) -> None:
    a = (np.clip(arr, 0, 1) * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(a).save(path)


# the per-flag help lines double as the GuidanceConfig reference
_CFG_FLAGS = {
    "gamma": "weight of the latent-anchor distance term in the guided objective",
    "lr": "optimizer step size for the guided objective",
    "m": "gradient steps per optimisation (per window step for gradop+)",
    "t0": "inversion noise level in [0,1]: how much of the chain re-runs",
    "t_start": "noisy end of the in-chain optimisation window (gradop+)",
    "t_end": "clean end of the in-chain optimisation window (gradop+)",
    "alpha_cfg": "classifier-free guidance blend: u + alpha*(c - u)",
    "n_iter": "loopback iterations",
    "k": "loopback noise-level growth factor per iteration",
    "n_ilvr": "low-pass downscale factor for ilvr",
    "seed": "root seed for every random draw of the run",
}


def _add_cfg_flags(p: argparse.ArgumentParser) -> None:
    for name, help_text in _CFG_FLAGS.items():
        kind = int if name in ("m", "n_iter", "n_ilvr", "seed") else float
        p.add_argument(f"--{name.replace('_', '-')}", type=kind, default=None,
                       dest=name, help=help_text)


def cmd_gen_data(args) -> int:
    train, val, test = make_dataset(args.n, seed=args.seed)
    out = Path(args.out)
    for split, samples in (("train", train), ("val", val), ("test", test)):
        save_dataset(out / split, samples)
    meta = _meta({"n": args.n}, args.seed)
    meta["splits"] = {"train": len(train), "val": len(val), "test": len(test)}
    (out / "dataset.json").write_text(json.dumps(meta, indent=1))
    print(f"wrote {args.n} scenes under {out}")
    return 0


def cmd_train(args) -> int:
    from .nets import train_autoencoder, train_denoiser, Autoencoder, reconstruction_mse

    allowed = {"epochs", "lr", "seed", "dropout", "batch_size"}
    file_cfg = _load_config_file(args.config, allowed)
    cfg = {"epochs": 10, "lr": None, "seed": 0, "dropout": 0.1, "batch_size": 16}
    cfg.update(file_cfg)
    for key in ("epochs", "lr", "seed"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)

    data_dir = Path(args.data)
    if not (data_dir / "train").exists():
        raise FileNotFoundError(f"no dataset under {data_dir} (run gen-data first)")
    train = load_dataset(data_dir / "train")
    val = load_dataset(data_dir / "val")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    if args.stage == "ae":
        lr = cfg["lr"] if cfg["lr"] is not None else 2e-3
        model, hist = train_autoencoder(train, val, epochs=cfg["epochs"], lr=lr,
                                        seed=cfg["seed"], batch_size=cfg["batch_size"],
                                        log=print)
        model.save(out / "autoencoder.glab")
        final = hist["val"][-1] if hist["val"] else None
    else:
        ae_path = out / "autoencoder.glab"
        if not ae_path.exists():
            raise FileNotFoundError(f"train the autoencoder first ({ae_path} missing)")
        ae = Autoencoder()
        ae.load_state(ae_path)
        lr = cfg["lr"] if cfg["lr"] is not None else 1e-3
        model, hist = train_denoiser(train, val, ae, NoiseSchedule(), epochs=cfg["epochs"],
                                     lr=lr, cond_dropout=cfg["dropout"], seed=cfg["seed"],
                                     batch_size=cfg["batch_size"], log=print)
        model.save(out / "denoiser.glab")
        final = hist["val"][-1] if hist["val"] else None
    meta = _meta(cfg, cfg["seed"])
    meta.update({"stage": args.stage, "final_val": final,
                 "duration_s": time.perf_counter() - t0})
    (out / f"train_{args.stage}.json").write_text(json.dumps(meta, indent=1))
    print(f"{args.stage} done in {meta['duration_s']:.0f}s, final val {final}")
    return 0


def cmd_synth(args) -> int:
    from .metrics import faithfulness
    from .nets import ModelBundle
    from .semctl import SemanticRegion, controlled_synthesis

    overrides = {k: getattr(args, k) for k in _CFG_FLAGS if getattr(args, k, None) is not None}
    file_cfg = _load_config_file(args.config, set(_CFG_FLAGS) | {"opt_paint"})
    try:
        cfg = GuidanceConfig().merged(**{**file_cfg, **overrides})
    except InvalidConfig as e:
        raise ConfigError(str(e)) from None

    models = ModelBundle.load(args.checkpoints)
    y = _load_png(args.painting)
    tokens = [t.strip() for t in args.tokens.split(",") if t.strip()]
    base_ids = VOCAB.encode(tokens[0], tokens[1:])

    regions = []
    if args.regions:
        spec_path = Path(args.regions)
        if not spec_path.exists():
            raise FileNotFoundError(f"region spec not found: {spec_path}")
        for item in json.loads(spec_path.read_text()):
            mask = (np.asarray(Image.open(spec_path.parent / item["mask"]).convert("L"),
                               dtype=np.float64) / 255.0 > 0.5).astype(np.float64)
            regions.append(SemanticRegion(mask=mask, label=item["label"],
                                          weight=float(item.get("weight", 1.0))))

    if regions:
        res = controlled_synthesis(models, y, base_ids, regions, args.method, cfg,
                                   record_attention=args.save_attention)
    else:
        res = SYNTH_METHODS[args.method](models, y, base_ids, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = args.name or f"{args.method.replace('+', 'plus')}_s{cfg.seed}"
    _save_png(out / f"{stem}.png", res.image)
    f_score = faithfulness(res.image, y)
    meta = _meta(asdict(cfg), cfg.seed)
    meta.update({"method": args.method, "tokens": tokens, "faithfulness": f_score,
                 "losses": res.losses, "duration_s": res.duration,
                 "painting": str(args.painting)})
    (out / f"{stem}.json").write_text(json.dumps(meta, indent=1))
    if args.save_attention and res.attention_record:
        from .semctl import attention_diagnostics, save_heatmaps
        ids = base_ids if not regions else None
        save_heatmaps(attention_diagnostics(res, token_ids=None), out / f"{stem}_attn")
    print(f"F = {f_score:.2f}")
    print(f"wrote {out / (stem + '.png')}")
    return 0


def cmd_eval(args) -> int:
    from .metrics import (MethodSpec, plot_tradeoff, run_benchmark,
                          sdedit_sweep_points, write_report)

    allowed = {"n_paintings", "n_seeds", "methods", "alpha_cfg", "workers",
               "dataset_seed", "dataset_n"}
    file_cfg = _load_config_file(args.config, allowed)
    n_paintings = int(file_cfg.get("n_paintings", args.n_paintings))
    n_seeds = int(file_cfg.get("n_seeds", args.n_seeds))
    workers = int(file_cfg.get("workers", args.workers))
    dataset_seed = int(file_cfg.get("dataset_seed", 11))
    dataset_n = int(file_cfg.get("dataset_n", max(240, n_paintings * 30)))

    _, _, test = make_dataset(dataset_n, seed=dataset_seed)
    flats = [s for s in test if s.domain == "flat"][:n_paintings]
    if len(flats) < n_paintings:
        raise ConfigError(f"test split only has {len(flats)} flat scenes")
    paintings = [s.painting for s in flats]
    toks = [VOCAB.encode("photo", s.objects) for s in flats]

    base = GuidanceConfig(**({"alpha_cfg": file_cfg["alpha_cfg"]}
                             if "alpha_cfg" in file_cfg else {}))
    specs = sdedit_sweep_points() + [
        MethodSpec("loopback", "loopback", {}),
        MethodSpec("ilvr", "ilvr", {}),
        MethodSpec("gradop", "gradop@M=0", {"m": 0}),
        MethodSpec("gradop", "gradop@M=40", {"m": 40}),
        MethodSpec("gradop+", "gradop+", {"m": 2}),
    ]
    wanted = file_cfg.get("methods")
    if wanted:
        specs = [s for s in specs if s.label in wanted or s.name in wanted]

    report = run_benchmark(args.checkpoints, paintings, toks, specs,
                           seeds=list(range(n_seeds)), base_config=base,
                           workers=workers, log=print)
    out = Path(args.out)
    paths = write_report(report, out)
    if args.plot:
        paths["plot"] = plot_tradeoff(report, out / "tradeoff.png")
    for p in report.points:
        print(f"{p.label:18s} F={p.f_mean:7.2f} R={p.r:8.3f}")
    print(f"report: {paths['json']}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    static = args.static
    if static is not None and not Path(static).exists():
        raise FileNotFoundError(f"static dir not found: {static}")
    print(f"serving on http://127.0.0.1:{args.port}")
    serve(args.checkpoints, port=args.port, static_dir=static, workers=args.workers)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="glab",
                                 description="desk-scale guided image synthesis lab")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="generate the two-domain scene dataset")
    p.add_argument("--n", type=int, default=1280)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=11)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the autoencoder or the denoiser")
    p.add_argument("stage", choices=["ae", "denoiser"])
    p.add_argument("--data", required=True, help="dataset dir from gen-data")
    p.add_argument("--out", required=True, help="checkpoint dir")
    p.add_argument("--config", help="JSON with epochs/lr/seed/dropout/batch_size")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("synth", help="synthesize an image from a stroke painting")
    p.add_argument("--method", choices=sorted(SYNTH_METHODS), required=True)
    p.add_argument("--painting", required=True, help="64x64 PNG reference painting")
    p.add_argument("--tokens", required=True,
                   help="comma list, domain token first: photo,sky,ground,river")
    p.add_argument("--regions", help="JSON region spec: [{mask,label,weight}]")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--name", help="output file stem")
    p.add_argument("--config", help="JSON config file (flags win)")
    p.add_argument("--save-attention", action="store_true")
    _add_cfg_flags(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("eval", help="benchmark methods and plot the F/R tradeoff")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON: n_paintings/n_seeds/methods/alpha_cfg/workers")
    p.add_argument("--n-paintings", type=int, default=16)
    p.add_argument("--n-seeds", type=int, default=32)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="serve the HTTP API (and UI if built)")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--static", help="static UI bundle dir")
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(fn=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ConfigError, InvalidConfig, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
