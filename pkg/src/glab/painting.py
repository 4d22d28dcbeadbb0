"""Painting functions: image -> coarse stroke painting.

Three variants with different jobs:

* ``paint_gaussian`` — differentiable blur used inside the synthesis
  optimisation loops (fastest; border-renormalised so flat images are
  fixed points).
* ``paint_median`` — plain median filter, metric building block.
* ``paint_sdedit`` — median filter + adaptive-palette quantisation; the
  stroke-simulation variant all metrics are computed with.
* ``paint_quantize_diff`` — soft nearest-palette assignment against a
  reference painting's palette; the differentiable stand-in for
  quantisation.

Kernel sizes follow the 1/8 desk-scale rule: the full-resolution recipe is a
size-31 sigma-7 blur and a size-23 median at 512 px, which lands on 5/1.0 and
3 at 64 px (rounded to odd).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "gaussian_kernel", "paint_gaussian", "paint_median", "paint_sdedit",
    "paint_quantize_diff", "median_cut_palette", "extract_palette",
    "GAUSS_KERNEL_SIZE", "GAUSS_SIGMA", "MEDIAN_KERNEL_SIZE", "PALETTE_SIZE",
]

GAUSS_KERNEL_SIZE = 5
GAUSS_SIGMA = 1.0
MEDIAN_KERNEL_SIZE = 3
PALETTE_SIZE = 20

_QUANT_TEMPERATURE = 0.1


def gaussian_kernel(size: int = GAUSS_KERNEL_SIZE, sigma: float = GAUSS_SIGMA) -> np.ndarray:
    if size % 2 == 0:
        raise ValueError("gaussian kernel size must be odd")
    ax = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _image3(x) -> None:
    shape = x.data.shape if isinstance(x, Tensor) else np.asarray(x).shape
    if len(shape) != 3 or shape[0] != 3:
        raise ValueError(f"expected a (3,H,W) image, got {shape}")


# per-(H,W) cache of the border mass carried by a zero-padded blur
_WEIGHT_CACHE: dict[tuple[int, int, int, float], np.ndarray] = {}


def _border_weight(h: int, w: int, size: int, sigma: float) -> np.ndarray:
    key = (h, w, size, sigma)
    got = _WEIGHT_CACHE.get(key)
    if got is None:
        k = gaussian_kernel(size, sigma)[None, None]
        ones = np.ones((1, 1, h, w))
        got = T.conv2d(Tensor(ones), Tensor(k)).data[0, 0]
        _WEIGHT_CACHE[key] = got
    return got


def paint_gaussian(x, size: int = GAUSS_KERNEL_SIZE, sigma: float = GAUSS_SIGMA) -> Tensor:
    """Differentiable per-channel Gaussian blur of a (3,H,W) image in [0,1].

    The underlying conv zero-pads, so the result is divided by the kernel
    mass actually inside the frame; constant images then stay constant all
    the way to the border.
    """
    x = T.astensor(x)
    _image3(x)
    _, h, w = x.data.shape
    k = gaussian_kernel(size, sigma)
    weight = _border_weight(h, w, size, sigma)
    xs = T.reshape(x, (3, 1, h, w))           # channels as batch: one shared kernel
    blurred = T.conv2d(xs, Tensor(k[None, None]))
    renorm = T.mul(blurred, Tensor(np.broadcast_to(1.0 / weight, (3, 1, h, w)).copy()))
    return T.reshape(renorm, (3, h, w))


def paint_median(x, k: int = MEDIAN_KERNEL_SIZE) -> np.ndarray:
    """Per-channel k x k median with edge replication. Not differentiable."""
    img = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    _image3(Tensor(img))
    if k % 2 == 0:
        raise ValueError("median kernel size must be odd")
    if k == 1:
        return img.copy()
    p = k // 2
    padded = np.pad(img, ((0, 0), (p, p), (p, p)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(1, 2))
    return np.median(win.reshape(*img.shape, k * k), axis=-1)


def median_cut_palette(pixels: np.ndarray, n_colors: int) -> np.ndarray:
    """Adaptive palette by median cut over an (N,3) pixel cloud.

    Boxes split along their widest channel at the median until ``n_colors``
    boxes exist (or colors run out); the palette is the per-box mean.
    """
    uniq = np.unique(pixels.reshape(-1, 3), axis=0)
    boxes = [uniq]
    while len(boxes) < n_colors:
        spans = [b.max(axis=0) - b.min(axis=0) if len(b) > 1 else np.zeros(3) for b in boxes]
        widest = int(np.argmax([s.max() for s in spans]))
        box = boxes[widest]
        if len(box) < 2:
            break  # nothing left to split
        axis = int(np.argmax(spans[widest]))
        order = np.argsort(box[:, axis], kind="stable")
        half = len(box) // 2
        boxes[widest:widest + 1] = [box[order[:half]], box[order[half:]]]
    return np.array([b.mean(axis=0) for b in boxes])


def paint_sdedit(x, palette_size: int = PALETTE_SIZE) -> np.ndarray:
    """Stroke-simulation painting: median filter then adaptive-palette quantise.

    This is the metric-time painting function; every pixel of the result is
    its nearest palette entry in RGB L2, and the palette has at most
    ``palette_size`` colors. Not differentiable.
    """
    filtered = paint_median(x, MEDIAN_KERNEL_SIZE)
    palette = median_cut_palette(filtered.transpose(1, 2, 0).reshape(-1, 3), palette_size)
    flat = filtered.transpose(1, 2, 0).reshape(-1, 3)
    d2 = ((flat[:, None, :] - palette[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(d2, axis=1)
    out = palette[nearest].reshape(filtered.shape[1], filtered.shape[2], 3)
    return out.transpose(2, 0, 1)


def extract_palette(y, max_colors: int = 64, quantize_to: int = PALETTE_SIZE) -> np.ndarray:
    """Palette of a reference painting: its distinct colors, or a median-cut
    reduction when the painting is not flat enough to enumerate."""
    img = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    _image3(Tensor(img))
    colors = np.unique(img.transpose(1, 2, 0).reshape(-1, 3), axis=0)
    if len(colors) == 0:
        raise ValueError("empty palette")
    if len(colors) > max_colors:
        colors = median_cut_palette(colors, quantize_to)
    return colors


def paint_quantize_diff(x, palette: np.ndarray, temperature: float = _QUANT_TEMPERATURE) -> Tensor:
    """Differentiable soft assignment of each pixel to the palette.

    Softmax over negative squared distances at the given temperature; the
    hard nearest-color map is the temperature->0 limit.  ``palette`` is an
    (P,3) array, typically ``extract_palette`` of the reference painting.
    """
    x = T.astensor(x)
    _image3(x)
    palette = np.asarray(palette, dtype=np.float64)
    if palette.ndim != 2 or palette.shape[1] != 3 or len(palette) == 0:
        raise ValueError("palette must be a nonempty (P,3) array")
    _, h, w = x.data.shape
    flat = T.transpose(T.reshape(x, (3, h * w)), (1, 0))          # (HW,3)
    # row softmax of -(|x|^2 - 2 x.p + |p|^2)/tau: the |x|^2 term is constant
    # per row and drops out of the softmax
    logits = T.bias_add(T.matmul(flat, Tensor(2.0 * palette.T / temperature)),
                        Tensor(-(palette ** 2).sum(axis=1) / temperature))
    weights = T.softmax(logits)                                    # (HW,P)
    mixed = T.matmul(weights, Tensor(palette))                     # (HW,3)
    return T.reshape(T.transpose(mixed, (1, 0)), (3, h, w))
