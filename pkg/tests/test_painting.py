import numpy as np
import pytest

from glab import painting as P
from glab.tensor import Tape, Tensor, mse

from oracles import autodiff_grad, finite_difference_grad, median_filter_direct, rel_err

RNG = np.random.default_rng(7)


def _rand_image(h=16, w=16):
    return RNG.uniform(0, 1, (3, h, w))


def test_gaussian_constant_image_is_fixed_point():
    img = np.full((3, 12, 12), 0.37)
    out = P.paint_gaussian(Tensor(img)).data
    assert np.allclose(out, img, atol=1e-12)


def test_gaussian_impulse_reproduces_kernel():
    img = np.zeros((3, 15, 15))
    img[:, 7, 7] = 1.0
    out = P.paint_gaussian(Tensor(img)).data
    k = P.gaussian_kernel()
    assert np.allclose(out[0, 5:10, 5:10], k, atol=1e-12)
    assert np.allclose(out[:, :5, :], 0.0)


def test_gaussian_gradient_matches_finite_differences():
    y = _rand_image(8, 8)
    x0 = _rand_image(8, 8)

    def graph(x):
        return mse(P.paint_gaussian(x), Tensor(y))

    def loss(arr):
        return float(np.mean((P.paint_gaussian(Tensor(arr)).data - y) ** 2))

    assert rel_err(autodiff_grad(graph, x0), finite_difference_grad(loss, x0)) < 1e-4


def test_median_constant_unchanged():
    img = np.full((3, 10, 10), 0.6)
    assert np.array_equal(P.paint_median(img, 3), img)


def test_median_k1_is_identity():
    img = _rand_image()
    assert np.array_equal(P.paint_median(img, 1), img)


def test_median_rejects_even_kernel():
    with pytest.raises(ValueError):
        P.paint_median(_rand_image(), 4)


def test_median_removes_salt_noise():
    img = np.full((3, 20, 20), 0.4)
    idx = RNG.choice(400, size=4, replace=False)  # 1% salt
    for c in range(3):
        img[c].reshape(-1)[idx] = 1.0
    out = P.paint_median(img, 3)
    assert np.allclose(out, 0.4, atol=1e-12)


def test_median_matches_bruteforce():
    img = _rand_image(9, 11)
    assert np.allclose(P.paint_median(img, 3), median_filter_direct(img, 3), atol=1e-12)


def test_sdedit_color_budget():
    out = P.paint_sdedit(_rand_image(32, 32))
    colors = np.unique(out.transpose(1, 2, 0).reshape(-1, 3), axis=0)
    assert len(colors) <= 20


def test_sdedit_flat_input_is_fixed_point():
    # 6 flat color stripes, wide enough that the median never mixes them
    img = np.zeros((3, 24, 24))
    stripe_colors = RNG.uniform(0, 1, (6, 3))
    for i in range(6):
        img[:, i * 4:(i + 1) * 4, :] = stripe_colors[i][:, None, None]
    out = P.paint_sdedit(img)
    assert np.allclose(out, img, atol=1e-9)


def test_sdedit_pixels_take_nearest_palette_color():
    out = P.paint_sdedit(_rand_image(24, 24))
    palette = np.unique(out.transpose(1, 2, 0).reshape(-1, 3), axis=0)
    flat = out.transpose(1, 2, 0).reshape(-1, 3)
    d2 = ((flat[:, None, :] - palette[None, :, :]) ** 2).sum(axis=2)
    # each pixel IS a palette entry, so its distance to the nearest entry is 0
    assert np.allclose(d2.min(axis=1), 0.0, atol=1e-18)


def test_sdedit_single_color_degenerate():
    img = np.full((3, 8, 8), 0.25)
    out = P.paint_sdedit(img)
    assert np.allclose(out, img)


def test_quantize_diff_on_palette_colors_low_temperature():
    palette = RNG.uniform(0, 1, (5, 3))
    h = w = 6
    ids = RNG.integers(0, 5, h * w)
    img = palette[ids].T.reshape(3, h, w)
    out = P.paint_quantize_diff(Tensor(img), palette, temperature=1e-4).data
    assert np.allclose(out, img, atol=1e-8)


def test_quantize_diff_single_color_palette_constant():
    palette = np.array([[0.2, 0.5, 0.9]])
    out = P.paint_quantize_diff(Tensor(_rand_image(6, 6)), palette).data
    assert np.allclose(out, np.broadcast_to(palette.T[:, :, None].reshape(3, 1, 1), (3, 6, 6)))


def test_quantize_diff_empty_palette_rejected():
    with pytest.raises(ValueError):
        P.paint_quantize_diff(Tensor(_rand_image(4, 4)), np.zeros((0, 3)))


def test_quantize_diff_gradient_matches_finite_differences():
    palette = RNG.uniform(0, 1, (6, 3))
    y = _rand_image(5, 5)
    x0 = _rand_image(5, 5)

    def graph(x):
        return mse(P.paint_quantize_diff(x, palette), Tensor(y))

    def loss(arr):
        return float(np.mean((P.paint_quantize_diff(Tensor(arr), palette).data - y) ** 2))

    assert rel_err(autodiff_grad(graph, x0), finite_difference_grad(loss, x0)) < 1e-3


def test_range_preserved_all_variants():
    img = _rand_image(16, 16)
    for out in (P.paint_gaussian(Tensor(img)).data,
                P.paint_median(img, 3),
                P.paint_sdedit(img),
                P.paint_quantize_diff(Tensor(img), P.extract_palette(P.paint_sdedit(img))).data):
        assert out.min() >= -1e-9 and out.max() <= 1.0 + 1e-9
        assert out.shape == img.shape
