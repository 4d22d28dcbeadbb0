"""Procedural paired scenes: (image, painting, masks, tokens) in two domains.

The "photo" domain renders smooth vertical gradients, 2 px feathered edges
and per-pixel Gaussian texture noise; the "flat" domain renders the same
geometry as constant-color regions with hard edges.  Geometry (and base
colors) derive only from (seed, object set), so the two domains of one seed
are pixel-registered and differ in style alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .painting import gaussian_kernel, paint_sdedit

__all__ = [
    "IMAGE_SIZE", "MAX_TOKENS", "PAD_TOKEN", "DOMAIN_TOKENS", "SEMANTIC_TOKENS",
    "Vocabulary", "SceneSample", "UnsatisfiableLayout", "generate_scene",
    "make_dataset", "save_dataset", "load_dataset", "local_variance",
]

IMAGE_SIZE = 64
MAX_TOKENS = 8
PAD_TOKEN = "<pad>"
DOMAIN_TOKENS = ("photo", "flat")
SEMANTIC_TOKENS = (
    "sky", "ground", "sun", "moon", "river", "waterfall", "hut",
    "castle", "tree", "grass", "mountain", "rock", "lake", "field",
)

NOISE_SIGMA = 0.03
FEATHER_SIZE = 5        # ~2 px soft edge
FEATHER_SIGMA = 0.8


class UnsatisfiableLayout(ValueError):
    """The requested object set cannot be placed under the layout rules."""


class Vocabulary:
    """Fixed token table: pad at index 0, then 2 domain + 14 semantic tokens.

    Indices are stable across runs; the embedding table is sized
    ``1 + len(tokens)`` to leave room for the reserved pad row.
    """

    def __init__(self):
        self.tokens: tuple[str, ...] = DOMAIN_TOKENS + SEMANTIC_TOKENS
        self._index = {PAD_TOKEN: 0}
        for i, t in enumerate(self.tokens):
            self._index[t] = i + 1

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def table_size(self) -> int:
        return len(self.tokens) + 1

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"unknown token '{token}'; valid: {list(self.tokens)}") from None

    def token(self, index: int) -> str:
        if index == 0:
            return PAD_TOKEN
        return self.tokens[index - 1]

    def is_domain(self, token: str) -> bool:
        return token in DOMAIN_TOKENS

    def is_semantic(self, token: str) -> bool:
        return token in SEMANTIC_TOKENS

    def encode(self, domain: str, objects) -> list[int]:
        """[domain, objects in vocabulary order, pad...] of length MAX_TOKENS."""
        if domain not in DOMAIN_TOKENS:
            raise KeyError(f"unknown domain '{domain}'")
        objs = set(objects)
        for o in objs:
            if o not in SEMANTIC_TOKENS:
                raise KeyError(f"unknown object token '{o}'")
        ordered = [t for t in SEMANTIC_TOKENS if t in objs]
        ids = [self.index(domain)] + [self.index(t) for t in ordered]
        if len(ids) > MAX_TOKENS:
            raise ValueError(f"token sequence too long: {len(ids)} > {MAX_TOKENS}")
        return ids + [0] * (MAX_TOKENS - len(ids))

    def pad_sequence(self) -> list[int]:
        return [0] * MAX_TOKENS


VOCAB = Vocabulary()


@dataclass
class SceneSample:
    image: np.ndarray                      # (3,64,64) in [0,1]
    painting: np.ndarray                   # metric painting of image
    masks: dict[str, np.ndarray]           # token -> (64,64) {0,1}
    tokens: list[int]                      # padded id sequence, domain first
    domain: str
    objects: list[str] = field(default_factory=list)
    seed: int = 0


_BASE_COLORS = {
    "sky": (0.45, 0.65, 0.90),
    "ground": (0.36, 0.50, 0.26),
    "sun": (0.98, 0.85, 0.30),
    "moon": (0.92, 0.92, 0.86),
    "river": (0.25, 0.50, 0.85),
    "waterfall": (0.62, 0.80, 0.95),
    "hut": (0.52, 0.34, 0.20),
    "castle": (0.55, 0.55, 0.62),
    "tree": (0.14, 0.40, 0.18),
    "grass": (0.42, 0.66, 0.30),
    "mountain": (0.52, 0.46, 0.52),
    "rock": (0.46, 0.43, 0.40),
    "lake": (0.30, 0.55, 0.80),
    "field": (0.80, 0.70, 0.36),
}

_SKY_OBJECTS = ("sun", "moon")
_PLACEMENT_TRIES = 80

_YY, _XX = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE]


def _ellipse(cy, cx, ry, rx) -> np.ndarray:
    return (((_YY - cy) / ry) ** 2 + ((_XX - cx) / rx) ** 2) <= 1.0


def _rect(top, left, h, w) -> np.ndarray:
    m = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=bool)
    m[max(top, 0):top + h, max(left, 0):left + w] = True
    return m


def _triangle(apex_y, apex_x, base_y, half_w) -> np.ndarray:
    # filled isoceles triangle, apex up
    height = max(base_y - apex_y, 1)
    frac = np.clip((_YY - apex_y) / height, 0.0, None)
    return (_YY >= apex_y) & (_YY <= base_y) & (np.abs(_XX - apex_x) <= frac * half_w)


def _object_mask(name: str, rng: np.random.Generator, horizon: int) -> np.ndarray:
    """Sample one placement of the named object; layout rules live here."""
    S = IMAGE_SIZE
    if name in ("sun", "moon"):
        r = int(rng.integers(4, 7))
        cy = int(rng.integers(r + 1, max(horizon - r - 1, r + 2)))
        cx = int(rng.integers(r + 1, S - r - 1))
        return _ellipse(cy, cx, r, r) & (_YY < horizon)
    if name == "mountain":
        half_w = int(rng.integers(8, 14))
        height = int(rng.integers(9, max(horizon - 3, 10)))
        cx = int(rng.integers(half_w, S - half_w))
        return _triangle(horizon - height, cx, horizon - 1, half_w)
    if name == "river":
        width = int(rng.integers(4, 7))
        cx0 = int(rng.integers(8, S - 8))
        amp = float(rng.uniform(2.0, 5.0))
        phase = float(rng.uniform(0, 2 * np.pi))
        rows = np.arange(S)
        centers = cx0 + amp * np.sin(rows / 9.0 + phase)
        m = np.abs(_XX - centers[:, None]) <= width / 2.0
        return m & (_YY >= horizon)
    if name == "waterfall":
        width = int(rng.integers(3, 6))
        cx = int(rng.integers(6, S - 6))
        length = int(rng.integers(10, S - horizon))
        return _rect(horizon, cx - width // 2, length, width)
    if name == "lake":
        ry = int(rng.integers(3, 6))
        rx = int(rng.integers(5, 10))
        cy = int(rng.integers(horizon + ry + 1, S - ry - 1))
        cx = int(rng.integers(rx + 1, S - rx - 1))
        return _ellipse(cy, cx, ry, rx) & (_YY >= horizon)
    if name == "field":
        h = int(rng.integers(4, 8))
        w = int(rng.integers(10, 18))
        top = int(rng.integers(horizon + 1, S - h - 1))
        left = int(rng.integers(1, S - w - 1))
        return _rect(top, left, h, w)
    if name == "grass":
        ry = int(rng.integers(2, 4))
        rx = int(rng.integers(4, 8))
        cy = int(rng.integers(horizon + ry + 1, S - ry - 1))
        cx = int(rng.integers(rx + 1, S - rx - 1))
        return _ellipse(cy, cx, ry, rx) & (_YY >= horizon)
    if name == "rock":
        ry = int(rng.integers(2, 4))
        rx = int(rng.integers(2, 5))
        cy = int(rng.integers(horizon + ry + 1, S - ry - 1))
        cx = int(rng.integers(rx + 1, S - rx - 1))
        return _ellipse(cy, cx, ry, rx) & (_YY >= horizon)
    if name == "tree":
        ry = int(rng.integers(4, 6))
        rx = int(rng.integers(3, 5))
        cy = int(rng.integers(horizon + ry + 1, S - ry - 3))
        cx = int(rng.integers(rx + 2, S - rx - 2))
        canopy = _ellipse(cy, cx, ry, rx)
        trunk = _rect(cy + ry - 1, cx - 1, 3, 2)
        return (canopy | trunk) & (_YY >= horizon)
    if name == "hut":
        bw = int(rng.integers(7, 11))
        bh = int(rng.integers(5, 8))
        top = int(rng.integers(horizon + 2, S - bh - 1))
        left = int(rng.integers(1, S - bw - 1))
        body = _rect(top, left, bh, bw)
        roof = _triangle(top - bh // 2, left + bw // 2, top, bw // 2 + 1)
        return body | (roof & (_YY >= horizon))
    if name == "castle":
        bw = int(rng.integers(11, 15))
        bh = int(rng.integers(7, 10))
        top = int(rng.integers(horizon + 2, max(S - bh - 1, horizon + 3)))
        left = int(rng.integers(1, S - bw - 1))
        body = _rect(top, left, bh, bw)
        t1 = _rect(top - 3, left, 3, 3)
        t2 = _rect(top - 3, left + bw - 3, 3, 3)
        return (body | t1 | t2) & (_YY >= horizon - 6)
    raise KeyError(f"no layout rule for object '{name}'")


def _feather(mask: np.ndarray) -> np.ndarray:
    """Soft alpha for photo rendering: small Gaussian blur of the 0/1 mask."""
    k = gaussian_kernel(FEATHER_SIZE, FEATHER_SIGMA)
    p = FEATHER_SIZE // 2
    padded = np.pad(mask.astype(np.float64), p, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (FEATHER_SIZE, FEATHER_SIZE))
    return np.einsum("ijkl,kl->ij", win, k)


def _vertical_gradient(mask: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Per-pixel multiplier ramping lo->hi from the mask's top row to bottom."""
    rows = np.where(mask.any(axis=1))[0]
    out = np.ones((IMAGE_SIZE, IMAGE_SIZE))
    if len(rows) == 0:
        return out
    r0, r1 = rows[0], rows[-1]
    span = max(r1 - r0, 1)
    ramp = lo + (hi - lo) * np.clip((_YY - r0) / span, 0, 1)
    return ramp


def generate_scene(seed: int, domain: str, objects) -> SceneSample:
    """Build one scene. Geometry depends only on (seed, objects)."""
    if domain not in DOMAIN_TOKENS:
        raise KeyError(f"unknown domain '{domain}'")
    objects = list(objects)
    for o in objects:
        if o not in SEMANTIC_TOKENS:
            raise KeyError(f"unknown object token '{o}'")
    if len(objects) + 1 > MAX_TOKENS:
        raise UnsatisfiableLayout(f"{len(objects)} objects exceed the token budget")

    rng = np.random.default_rng([seed, 0x5CE17E])
    horizon = int(rng.uniform(0.45, 0.66) * IMAGE_SIZE)

    # deterministic object order = vocabulary order
    ordered = [t for t in SEMANTIC_TOKENS if t in objects]
    placed: dict[str, np.ndarray] = {}
    occupied = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=bool)
    colors: dict[str, np.ndarray] = {}

    colors["sky"] = np.clip(np.array(_BASE_COLORS["sky"]) + rng.uniform(-0.05, 0.05, 3), 0, 1)
    colors["ground"] = np.clip(np.array(_BASE_COLORS["ground"]) + rng.uniform(-0.05, 0.05, 3), 0, 1)

    for name in ordered:
        if name in ("sky", "ground"):
            continue
        ok = False
        for _ in range(_PLACEMENT_TRIES):
            m = _object_mask(name, rng, horizon)
            if m.sum() >= 16 and not (m & occupied).any():
                placed[name] = m
                occupied |= m
                ok = True
                break
        if not ok:
            raise UnsatisfiableLayout(f"could not place '{name}' (seed={seed}, objects={objects})")
        colors[name] = np.clip(np.array(_BASE_COLORS[name]) + rng.uniform(-0.05, 0.05, 3), 0, 1)

    sky_region = _YY < horizon
    if "sky" in objects:
        placed["sky"] = sky_region & ~occupied
    if "ground" in objects:
        placed["ground"] = ~sky_region & ~occupied

    # ---- rendering (geometry draws above are identical for both domains) ----
    img = np.zeros((3, IMAGE_SIZE, IMAGE_SIZE))
    if domain == "photo":
        sky_ramp = 0.75 + 0.40 * np.clip(_YY / max(horizon, 1), 0, 1)
        ground_ramp = 1.10 - 0.40 * np.clip((_YY - horizon) / max(IMAGE_SIZE - horizon, 1), 0, 1)
        base = np.where(sky_region[None], colors["sky"][:, None, None] * sky_ramp[None],
                        colors["ground"][:, None, None] * ground_ramp[None])
        img = base.copy()
        for name in ordered:
            if name in ("sky", "ground") or name not in placed:
                continue
            alpha = _feather(placed[name])[None]
            ramp = _vertical_gradient(placed[name], 1.08, 0.92)[None]
            img = img * (1 - alpha) + (colors[name][:, None, None] * ramp) * alpha
        img = img + rng.normal(0.0, NOISE_SIGMA, img.shape)
    else:
        img = np.where(sky_region[None], colors["sky"][:, None, None],
                       colors["ground"][:, None, None]).astype(np.float64)
        for name in ordered:
            if name in ("sky", "ground") or name not in placed:
                continue
            img[:, placed[name]] = colors[name][:, None]

    img = np.clip(img, 0.0, 1.0)
    masks = {name: placed[name].astype(np.float64) for name in placed}
    tokens = VOCAB.encode(domain, objects)
    return SceneSample(image=img, painting=paint_sdedit(img), masks=masks,
                       tokens=tokens, domain=domain, objects=ordered, seed=seed)


def local_variance(img: np.ndarray, k: int = 3) -> float:
    """Mean per-channel variance over k x k neighborhoods; a texture statistic."""
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k), axis=(1, 2))
    return float(win.var(axis=(-1, -2)).mean())


def make_dataset(n: int, split_ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """n deterministic scenes split train/val/test; both domains and every
    semantic token are represented (n must be at least 10)."""
    if n < 10:
        raise ValueError("need n >= 10 to cover both domains and the vocabulary")
    if abs(sum(split_ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    rng = np.random.default_rng([seed, 0xDA7A])
    extras = [t for t in SEMANTIC_TOKENS if t not in ("sky", "ground")]
    samples = []
    for i in range(n):
        domain = DOMAIN_TOKENS[i % 2]
        for attempt in range(20):
            k = int(rng.integers(1, 5))
            chosen = list(rng.choice(extras, size=k, replace=False))
            # round-robin one guaranteed token so rare ones still show up
            forced = extras[i % len(extras)]
            if forced not in chosen:
                chosen.append(forced)
            try:
                s = generate_scene(int(rng.integers(0, 2 ** 31)) + attempt,
                                   domain, ["sky", "ground"] + chosen)
                break
            except UnsatisfiableLayout:
                continue
        else:
            raise UnsatisfiableLayout(f"sample {i}: no placeable object set found")
        samples.append(s)

    order = rng.permutation(n)
    n_val = int(split_ratios[1] * n)
    n_test = int(split_ratios[2] * n)
    n_train = n - n_val - n_test
    train = [samples[j] for j in order[:n_train]]
    val = [samples[j] for j in order[n_train:n_train + n_val]]
    test = [samples[j] for j in order[n_train + n_val:]]
    return train, val, test


# ---------------------------------------------------------------------------
# on-disk cache: PNGs plus one JSON sidecar per sample


def _to_png(path: Path, arr: np.ndarray) -> None:
    a = np.clip(arr, 0, 1)
    if a.ndim == 3:
        a = a.transpose(1, 2, 0)
    Image.fromarray((a * 255.0 + 0.5).astype(np.uint8)).save(path)


def _from_png(path: Path) -> np.ndarray:
    a = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    if a.ndim == 3:
        a = a.transpose(2, 0, 1)
    return a


def save_dataset(directory, samples) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        stem = f"{i:05d}"
        _to_png(directory / f"{stem}_image.png", s.image)
        _to_png(directory / f"{stem}_painting.png", s.painting)
        mask_files = {}
        for name, m in s.masks.items():
            fn = f"{stem}_mask_{name}.png"
            _to_png(directory / fn, m)
            mask_files[name] = fn
        sidecar = {
            "tokens": [VOCAB.token(t) for t in s.tokens if t != 0],
            "domain": s.domain,
            "objects": s.objects,
            "seed": s.seed,
            "image": f"{stem}_image.png",
            "painting": f"{stem}_painting.png",
            "masks": mask_files,
        }
        (directory / f"{stem}.json").write_text(json.dumps(sidecar, indent=1))


def load_dataset(directory) -> list[SceneSample]:
    directory = Path(directory)
    out = []
    for sidecar_path in sorted(directory.glob("*.json")):
        meta = json.loads(sidecar_path.read_text())
        image = _from_png(directory / meta["image"])
        painting = _from_png(directory / meta["painting"])
        masks = {name: (_from_png(directory / fn) > 0.5).astype(np.float64)
                 for name, fn in meta["masks"].items()}
        tokens = VOCAB.encode(meta["domain"], meta["objects"])
        out.append(SceneSample(image=image, painting=painting, masks=masks,
                               tokens=tokens, domain=meta["domain"],
                               objects=meta["objects"], seed=meta.get("seed", 0)))
    return out
