import numpy as np
import pytest

from glab import tensor as T
from glab.tensor import (
    Adam, GraphError, NonFiniteError, ShapeError, Tape, Tensor,
    load_checkpoint, save_checkpoint,
)

from oracles import autodiff_grad, conv2d_direct, finite_difference_grad, rel_err

RNG = np.random.default_rng(42)


def test_mse_identity_is_zero():
    a = Tensor(RNG.uniform(-1, 1, (3, 5, 5)))
    assert T.mse(a, a).item() == 0.0


def test_frobenius_norm_identity_matrix():
    assert T.frobenius_norm(Tensor(np.eye(3))).item() == pytest.approx(np.sqrt(3), abs=1e-12)


def test_conv2d_impulse_recovers_kernel():
    x = np.zeros((1, 1, 9, 9))
    x[0, 0, 4, 4] = 1.0
    k = RNG.normal(size=(1, 1, 3, 3))
    got = T.conv2d(Tensor(x), Tensor(k)).data
    expected = conv2d_direct(x, k)
    assert np.allclose(got, expected, atol=1e-12)
    # the kernel shows up centred on the impulse, flipped by correlation order
    assert np.allclose(got[0, 0, 3:6, 3:6], expected[0, 0, 3:6, 3:6])


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_direct_convolution(stride):
    x = RNG.normal(size=(2, 3, 8, 8))
    w = RNG.normal(size=(4, 3, 3, 3))
    got = T.conv2d(Tensor(x), Tensor(w), stride=stride).data
    assert np.allclose(got, conv2d_direct(x, w, stride), atol=1e-10)


def test_backward_sum_gives_ones():
    z = Tensor(RNG.normal(size=(4, 3)), requires_grad=True)
    with Tape() as tape:
        loss = T.tsum(z)
        tape.backward(loss)
    assert np.array_equal(z.grad, np.ones((4, 3)))


def test_backward_unrelated_leaf_gets_no_grad():
    z = Tensor(RNG.normal(size=(3,)), requires_grad=True)
    other = Tensor(RNG.normal(size=(3,)), requires_grad=True)
    with Tape() as tape:
        loss = T.tsum(z)
        tape.backward(loss)
    assert other.grad is None


def test_backward_requires_scalar_root():
    z = Tensor(RNG.normal(size=(3,)), requires_grad=True)
    with Tape() as tape:
        y = T.mul(z, z)
        with pytest.raises(GraphError):
            tape.backward(y)


def test_backward_detached_root_rejected():
    z = Tensor(RNG.normal(size=(3,)), requires_grad=True)
    with Tape() as tape:
        _ = T.tsum(z)
        detached = T.tsum(Tensor(np.ones(3)))  # no requires_grad input: not on tape
        with pytest.raises(GraphError):
            tape.backward(detached)


def test_backward_composite_matches_finite_differences():
    w = RNG.normal(size=(5, 4))
    y = RNG.normal(size=(3, 4))
    x0 = RNG.uniform(-1, 1, (3, 5))

    def graph(x):
        return T.mse(T.tanh(T.matmul(x, Tensor(w))), Tensor(y))

    def loss(arr):
        return float(np.mean((np.tanh(arr @ w) - y) ** 2))

    g_auto = autodiff_grad(graph, x0)
    g_fd = finite_difference_grad(loss, x0)
    assert rel_err(g_auto, g_fd) < 1e-4


def test_backward_linearity():
    x0 = RNG.uniform(-1, 1, (4, 4))
    a, b = 2.5, -0.7

    def l1(x):
        return T.mse(x, Tensor(np.zeros((4, 4))))

    def l2(x):
        return T.frobenius_norm(x)

    g1 = autodiff_grad(l1, x0)
    g2 = autodiff_grad(l2, x0)
    g_combo = autodiff_grad(lambda x: T.add(T.scale(l1(x), a), T.scale(l2(x), b)), x0)
    assert np.allclose(g_combo, a * g1 + b * g2, atol=1e-12)


def test_nested_tape_rejected():
    with Tape():
        with pytest.raises(GraphError):
            with Tape():
                pass


def test_non_finite_output_raises():
    big = Tensor(np.full((2, 2), 1e308))
    with pytest.raises(NonFiniteError):
        T.mul(big, big)


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_determinism_same_inputs_bitwise():
    x = RNG.normal(size=(2, 3, 8, 8))
    w = RNG.normal(size=(4, 3, 3, 3))
    a = T.conv2d(Tensor(x), Tensor(w)).data
    b = T.conv2d(Tensor(x), Tensor(w)).data
    assert np.array_equal(a, b)


# -- gradient checks for each primitive ------------------------------------

def _check(build_graph, loss_fn, x0, tol=1e-4):
    g_auto = autodiff_grad(build_graph, x0)
    g_fd = finite_difference_grad(loss_fn, x0)
    err = rel_err(g_auto, g_fd)
    assert err < tol, f"gradient mismatch: rel err {err:.3e}"


def test_grad_add_mul_scale():
    b = RNG.normal(size=(3, 4))
    x0 = RNG.uniform(-1, 1, (3, 4))
    _check(lambda x: T.tsum(T.mul(T.add(x, Tensor(b)), x)),
           lambda a: float(((a + b) * a).sum()), x0)
    _check(lambda x: T.tsum(T.scale(x, 3.7)), lambda a: float((a * 3.7).sum()), x0)
    _check(lambda x: T.tsum(T.sub(x, Tensor(b))), lambda a: float((a - b).sum()), x0)
    _check(lambda x: T.tsum(T.neg(x)), lambda a: float((-a).sum()), x0)


def test_grad_matmul_2d_and_3d():
    w2 = RNG.normal(size=(4, 6))
    x0 = RNG.uniform(-1, 1, (3, 4))
    _check(lambda x: T.frobenius_norm(T.matmul(x, Tensor(w2))),
           lambda a: float(np.linalg.norm(a @ w2)), x0)
    w3 = RNG.normal(size=(2, 4, 5))
    x3 = RNG.uniform(-1, 1, (2, 3, 4))
    _check(lambda x: T.tsum(T.matmul(x, Tensor(w3))),
           lambda a: float((a @ w3).sum()), x3)


def test_grad_conv2d_both_strides():
    w = RNG.normal(size=(2, 3, 3, 3))
    x0 = RNG.uniform(-1, 1, (1, 3, 4, 4))
    for s in (1, 2):
        _check(lambda x, s=s: T.tsum(T.conv2d(x, Tensor(w), stride=s)),
               lambda a, s=s: float(conv2d_direct(a, w, s).sum()), x0)


def test_grad_conv2d_kernel_and_bias():
    x = RNG.uniform(-1, 1, (1, 2, 4, 4))
    b = RNG.normal(size=(3,))
    w0 = RNG.normal(size=(3, 2, 3, 3))

    def graph(wt):
        return T.tsum(T.conv2d(Tensor(x), wt, bias=Tensor(b)))

    def loss(warr):
        return float((conv2d_direct(x, warr) + b[None, :, None, None]).sum())

    _check(graph, loss, w0)


def test_grad_pool_upsample_softmax():
    x0 = RNG.uniform(-1, 1, (1, 2, 4, 4))
    _check(lambda x: T.frobenius_norm(T.avg_pool(x, 2)),
           lambda a: float(np.linalg.norm(a.reshape(1, 2, 2, 2, 2, 2).mean(axis=(3, 5)))), x0)
    _check(lambda x: T.frobenius_norm(T.upsample_nearest(x, 2)),
           lambda a: float(np.linalg.norm(a.repeat(2, 2).repeat(2, 3))), x0)
    y = RNG.normal(size=(3, 5))
    x1 = RNG.uniform(-1, 1, (3, 5))

    def np_softmax(a):
        e = np.exp(a - a.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    _check(lambda x: T.mse(T.softmax(x), Tensor(y)),
           lambda a: float(np.mean((np_softmax(a) - y) ** 2)), x1)


def test_grad_activations():
    x0 = RNG.uniform(-1, 1, (4, 4))
    x0 = np.where(np.abs(x0) < 1e-2, x0 + 0.05, x0)  # keep clear of the relu kink
    s = lambda a: 1.0 / (1.0 + np.exp(-a))
    _check(lambda x: T.tsum(T.relu(x)), lambda a: float(np.maximum(a, 0).sum()), x0)
    _check(lambda x: T.tsum(T.silu(x)), lambda a: float((a * s(a)).sum()), x0)
    _check(lambda x: T.tsum(T.sigmoid(x)), lambda a: float(s(a).sum()), x0)
    _check(lambda x: T.tsum(T.tanh(x)), lambda a: float(np.tanh(a).sum()), x0)


def test_grad_group_norm_all_inputs():
    B, C, H, W, G = 2, 4, 3, 3, 2
    gamma = RNG.normal(size=(C,)) + 1.0
    beta = RNG.normal(size=(C,))
    x0 = RNG.uniform(-1, 1, (B, C, H, W))

    def gn_np(a, gm=gamma, bt=beta):
        xg = a.reshape(B, G, -1)
        mu = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        xh = ((xg - mu) / np.sqrt(var + 1e-5)).reshape(B, C, H, W)
        return xh * gm[None, :, None, None] + bt[None, :, None, None]

    _check(lambda x: T.frobenius_norm(T.group_norm(x, Tensor(gamma), Tensor(beta), G)),
           lambda a: float(np.linalg.norm(gn_np(a))), x0)
    # gamma gradient
    g_auto = autodiff_grad(
        lambda g: T.frobenius_norm(T.group_norm(Tensor(x0), g, Tensor(beta), G)), gamma)
    g_fd = finite_difference_grad(
        lambda g: float(np.linalg.norm(gn_np(x0, gm=g))), gamma)
    assert rel_err(g_auto, g_fd) < 1e-4


def test_grad_reductions_and_shape_ops():
    y = RNG.normal(size=(3, 4))
    x0 = RNG.uniform(-1, 1, (3, 4))
    _check(lambda x: T.mse(x, Tensor(y)), lambda a: float(np.mean((a - y) ** 2)), x0)
    x1 = RNG.uniform(0.5, 1.5, (3, 4))  # away from the norm's origin
    _check(lambda x: T.frobenius_norm(x), lambda a: float(np.linalg.norm(a)), x1)
    _check(lambda x: T.tsum(T.reshape(x, (12,))), lambda a: float(a.sum()), x0)
    _check(lambda x: T.frobenius_norm(T.transpose(x, (1, 0))),
           lambda a: float(np.linalg.norm(a.T)), x0)
    b = RNG.normal(size=(4,))
    _check(lambda x: T.frobenius_norm(T.bias_add(x, Tensor(b))),
           lambda a: float(np.linalg.norm(a + b)), x0)


def test_grad_channel_add_and_embed():
    x = RNG.uniform(-1, 1, (2, 3, 4, 4))
    v0 = RNG.uniform(-1, 1, (2, 3))
    _check(lambda v: T.frobenius_norm(T.channel_add(Tensor(x), v)),
           lambda a: float(np.linalg.norm(x + a[:, :, None, None])), v0)
    ids = np.array([[0, 2, 1], [2, 2, 0]])
    t0 = RNG.uniform(-1, 1, (3, 4))
    _check(lambda t: T.frobenius_norm(T.embed(t, ids)),
           lambda a: float(np.linalg.norm(a[ids])), t0)


# -- Adam -------------------------------------------------------------------

def test_adam_zero_grad_leaves_params():
    p = Tensor(RNG.normal(size=(3,)), requires_grad=True)
    before = p.data.copy()
    opt = Adam({"p": p}, lr=1e-2)
    p.grad = np.zeros(3)
    opt.step()
    assert np.allclose(p.data, before, atol=1e-12)


def test_adam_moves_against_gradient_sign():
    p = Tensor(np.zeros(4), requires_grad=True)
    g = np.array([1.0, -2.0, 0.5, -0.1])
    opt = Adam({"p": p}, lr=1e-2)
    for _ in range(50):
        p.grad = g.copy()
        opt.step()
    assert np.all(np.sign(p.data) == -np.sign(g))


def test_adam_finds_quadratic_minimum():
    # Adam advances ~lr per step regardless of gradient scale, so the bowl
    # minimum has to be reachable inside the 500-step budget.
    target = np.array([0.5, -0.8, 0.7])
    p = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam({"p": p}, lr=1e-2)
    for _ in range(500):
        opt.zero_grad()
        with Tape() as tape:
            loss = T.mse(p, Tensor(target))
            tape.backward(loss)
        opt.step()
    assert np.abs(p.data - target).max() < 1e-3


def test_adam_step_counter_increments():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam({"p": p})
    for i in range(3):
        p.grad = np.ones(2)
        opt.step()
        assert opt.step_count == i + 1


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    params = {
        "enc.w": RNG.normal(size=(4, 3, 3, 3)),
        "enc.b": RNG.normal(size=(4,)),
        "scalarish": np.asarray(np.pi),
        "empty_name_ok": RNG.normal(size=(2, 2)),
    }
    path = tmp_path / "model.glab"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(params)
    for k in params:
        assert loaded[k].shape == np.asarray(params[k]).shape
        assert np.array_equal(loaded[k], params[k])
        assert loaded[k].tobytes() == np.ascontiguousarray(params[k], dtype="<f8").tobytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE!" + b"\x00" * 16)
    with pytest.raises(ValueError):
        load_checkpoint(path)
