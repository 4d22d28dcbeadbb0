import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CACHE = Path(__file__).resolve().parent.parent / ".cache"

# bump to invalidate cached checkpoints when architectures change
_STACK_VERSION = 3

MICRO_CFG = {"v": _STACK_VERSION, "n": 48, "data_seed": 5,
             "ae_epochs": 3, "den_epochs": 5, "seed": 0}
DESK_CFG = {"v": _STACK_VERSION, "n": 1280, "data_seed": 11,
            "ae_epochs": 10, "den_epochs": 20, "seed": 0}


def _train_stack(tag: str, cfg: dict) -> Path:
    """Train (or reuse the cached) deterministic stack for tests."""
    from glab.diffusion import NoiseSchedule
    from glab.nets import train_autoencoder, train_denoiser
    from glab.scenegen import make_dataset

    out = CACHE / tag
    marker = out / "train_meta.json"
    if marker.exists():
        meta = json.loads(marker.read_text())
        if meta.get("cfg") == cfg and (out / "denoiser.glab").exists():
            return out
    out.mkdir(parents=True, exist_ok=True)
    train, val, _ = make_dataset(cfg["n"], seed=cfg["data_seed"])
    ae, ah = train_autoencoder(train, val, epochs=cfg["ae_epochs"], lr=2e-3,
                               seed=cfg["seed"], batch_size=16)
    ae.save(out / "autoencoder.glab")
    den, dh = train_denoiser(train, val, ae, NoiseSchedule(), epochs=cfg["den_epochs"],
                             lr=1e-3, seed=cfg["seed"], batch_size=16)
    den.save(out / "denoiser.glab")
    marker.write_text(json.dumps({"cfg": cfg, "history": {"ae": ah, "den": dh}}))
    return out


@pytest.fixture(scope="session")
def micro_stack_dir() -> Path:
    """Tiny trained stack: fast to build, structurally valid, low quality."""
    return _train_stack("micro", MICRO_CFG)


@pytest.fixture(scope="session")
def desk_stack_dir() -> Path:
    """The full desk-scale stack used by the trend and control criteria."""
    return _train_stack("desk", DESK_CFG)


@pytest.fixture(scope="session")
def desk_models(desk_stack_dir):
    from glab.nets import ModelBundle
    return ModelBundle.load(desk_stack_dir)


@pytest.fixture(scope="session")
def desk_test_scenes():
    from glab.scenegen import make_dataset
    _, _, test = make_dataset(DESK_CFG["n"], seed=DESK_CFG["data_seed"])
    return test
