"""Dense float64 tensors with a reverse-mode tape, Adam, and checkpoint I/O.

Row-major dense storage only.  Elementwise ops require identical shapes; the
only implicit broadcasts are the documented narrow ones (conv bias over output
channels, ``bias_add`` over the trailing axis, ``channel_add`` of a per-sample
channel vector).  Every primitive checks its output for NaN/Inf and raises,
so a diverging computation fails at the op that produced it.

Gradients are recorded on an explicit :class:`Tape`: ops executed while a
tape is active append their backward closure in execution order, and
``tape.backward(loss)`` walks the record once in reverse, which is a reverse
topological order by construction.
"""

from __future__ import annotations

import math
import struct
import threading
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "Adam", "ShapeError", "NonFiniteError", "GraphError",
    "astensor", "add", "sub", "mul", "neg", "scale", "add_scalar", "matmul",
    "conv2d", "avg_pool", "upsample_nearest", "softmax", "relu", "silu",
    "sigmoid", "tanh", "group_norm", "mse", "tsum", "mean", "frobenius_norm",
    "embed", "reshape", "transpose", "bias_add", "channel_add",
    "save_checkpoint", "load_checkpoint", "CHECKPOINT_MAGIC",
]


class ShapeError(ValueError):
    """Operands do not conform for the requested op."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""


class GraphError(RuntimeError):
    """Backward requested on an invalid or detached graph."""


_TLS = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_TLS, "tape", None)


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        # cheap screen first (any NaN/Inf poisons the sum), exact check only
        # on failure so legitimate huge-but-finite sums are not rejected
        if not math.isfinite(arr.sum()) and not np.isfinite(arr).all():
            raise NonFiniteError("tensor holds non-finite values")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        req = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{req})"

    # Arithmetic sugar; scalars go through the dedicated scalar ops so no
    # tensor-tensor broadcasting sneaks in.
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise ShapeError("tensor/tensor division is not a primitive")


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed primitives for one backward pass.

    Single-owner: enter with ``with Tape() as tape:``, build the forward
    computation, then call ``tape.backward(loss)``.  Execution order is a
    topological order, so the reversed walk visits each node exactly once.
    Tapes do not nest and must not be shared across threads.
    """

    def __init__(self):
        self._nodes: list[Callable[[], None]] = []
        self._outputs: list[Tensor] = []
        self._output_ids: set[int] = set()

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise GraphError("a tape is already active in this thread")
        _TLS.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _TLS.tape = None
        return False

    def record(self, out: Tensor, backward_fn: Callable[[], None]) -> None:
        self._nodes.append(backward_fn)
        self._outputs.append(out)
        self._output_ids.add(id(out))

    def backward(self, root: Tensor) -> None:
        """Populate ``.grad`` on every requires-grad leaf reachable from root."""
        if root.data.shape != ():
            raise GraphError(f"backward root must be scalar, got shape {root.data.shape}")
        if id(root) not in self._output_ids:
            raise GraphError("root is not an output recorded on this tape")
        root.grad = np.ones((), dtype=np.float64)
        for fn in reversed(self._nodes):
            fn()


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _finish(out: Tensor, inputs: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    # finiteness was already checked when the output Tensor was constructed
    tape = _active_tape()
    if tape is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        tape.record(out, backward_fn)
    return out


def _need_grad(out: Tensor) -> Optional[np.ndarray]:
    # Branches that never influenced the loss carry no gradient.
    return out.grad


# ---------------------------------------------------------------------------
# elementwise / scalar


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, g)

    return _finish(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data - b.data)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if a.requires_grad:
            _accum(a, g)
        if b.requires_grad:
            _accum(b, -g)

    return _finish(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _finish(out, (a, b), bw, "mul")


def neg(a) -> Tensor:
    a = astensor(a)
    out = Tensor(-a.data)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if a.requires_grad:
            _accum(a, -g)

    return _finish(out, (a,), bw, "neg")


def scale(a, c: float) -> Tensor:
    a = astensor(a)
    out = Tensor(a.data * c)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if a.requires_grad:
            _accum(a, g * c)

    return _finish(out, (a,), bw, "scale")


def add_scalar(a, c: float) -> Tensor:
    a = astensor(a)
    out = Tensor(a.data + c)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if a.requires_grad:
            _accum(a, g)

    return _finish(out, (a,), bw, "add_scalar")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """2-D x 2-D, or stacked 3-D x 3-D with equal leading dimension."""
    a, b = astensor(a), astensor(b)
    da, db = a.data, b.data
    if da.ndim == db.ndim == 2:
        if da.shape[1] != db.shape[0]:
            raise ShapeError(f"matmul: {da.shape} @ {db.shape}")
    elif da.ndim == db.ndim == 3:
        if da.shape[0] != db.shape[0] or da.shape[2] != db.shape[1]:
            raise ShapeError(f"matmul: {da.shape} @ {db.shape}")
    else:
        raise ShapeError(f"matmul needs 2-D or 3-D pairs, got {da.ndim}-D and {db.ndim}-D")
    out = Tensor(da @ db)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if a.requires_grad:
            _accum(a, g @ db.swapaxes(-1, -2))
        if b.requires_grad:
            _accum(b, da.swapaxes(-1, -2) @ g)

    return _finish(out, (a, b), bw, "matmul")


def bias_add(x, b) -> Tensor:
    """Add a 1-D bias over the trailing axis of x."""
    x, b = astensor(x), astensor(b)
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"bias_add: {x.data.shape} + {b.data.shape}")
    out = Tensor(x.data + b.data)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if x.requires_grad:
            _accum(x, g)
        if b.requires_grad:
            _accum(b, g.reshape(-1, b.data.shape[0]).sum(axis=0))

    return _finish(out, (x, b), bw, "bias_add")


def channel_add(x, v) -> Tensor:
    """Add a per-sample channel vector (B, C) over a (B, C, H, W) map."""
    x, v = astensor(x), astensor(v)
    if x.data.ndim != 4 or v.data.ndim != 2 or x.data.shape[:2] != v.data.shape:
        raise ShapeError(f"channel_add: {x.data.shape} + {v.data.shape}")
    out = Tensor(x.data + v.data[:, :, None, None])

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if x.requires_grad:
            _accum(x, g)
        if v.requires_grad:
            _accum(v, g.sum(axis=(2, 3)))

    return _finish(out, (x, v), bw, "channel_add")


# ---------------------------------------------------------------------------
# convolution and spatial ops


def conv2d(x, w, bias=None, stride: int = 1) -> Tensor:
    """'same' zero-padded conv: x (B,C,H,W), w (O,C,kh,kw), odd kernel.

    Zero padding means constant inputs are NOT fixed points near borders;
    callers that need mass preservation renormalise on top (see painting).
    """
    x, w = astensor(x), astensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and 4-D kernel")
    B, C, H, W = x.data.shape
    O, Cw, kh, kw = w.data.shape
    if Cw != C:
        raise ShapeError(f"conv2d: input has {C} channels, kernel expects {Cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d kernels must be odd-sized")
    if H % stride or W % stride:
        raise ShapeError("conv2d: spatial dims must divide the stride")
    ph, pw = kh // 2, kw // 2
    Hp, Wp = H + 2 * ph, W + 2 * pw
    xp = np.zeros((B, C, Hp, Wp))
    xp[:, :, ph:ph + H, pw:pw + W] = x.data
    sB, sC, sH, sW = xp.strides
    Ho, Wo = H // stride, W // stride
    win = np.lib.stride_tricks.as_strided(
        xp, (B, Ho, Wo, C, kh, kw),
        (sB, sH * stride, sW * stride, sC, sH, sW), writeable=False)
    cols = win.reshape(B * Ho * Wo, C * kh * kw)            # single copy
    wf = w.data.reshape(O, -1)
    out_arr = np.ascontiguousarray((cols @ wf.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))
    b_t = astensor(bias) if bias is not None else None
    if b_t is not None:
        if b_t.data.shape != (O,):
            raise ShapeError(f"conv2d bias: expected ({O},), got {b_t.data.shape}")
        out_arr += b_t.data[None, :, None, None]
    out = Tensor(out_arr)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        gm = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        if w.requires_grad:
            _accum(w, (gm.T @ cols).reshape(w.data.shape))
        if b_t is not None and b_t.requires_grad:
            _accum(b_t, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (gm @ wf).reshape(B, Ho, Wo, C, kh, kw)
            dxp = np.zeros((B, C, Hp, Wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            _accum(x, dxp[:, :, ph:ph + H, pw:pw + W])

    inputs = (x, w) if b_t is None else (x, w, b_t)
    return _finish(out, inputs, bw, "conv2d")


def avg_pool(x, k: int) -> Tensor:
    x = astensor(x)
    if x.data.ndim != 4:
        raise ShapeError("avg_pool expects (B,C,H,W)")
    B, C, H, W = x.data.shape
    if H % k or W % k:
        raise ShapeError(f"avg_pool: {H}x{W} not divisible by {k}")
    out = Tensor(x.data.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5)))

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if x.requires_grad:
            gx = np.broadcast_to(g[:, :, :, None, :, None] / (k * k), (B, C, H // k, k, W // k, k))
            _accum(x, gx.reshape(B, C, H, W))

    return _finish(out, (x,), bw, "avg_pool")


def upsample_nearest(x, k: int) -> Tensor:
    x = astensor(x)
    if x.data.ndim != 4:
        raise ShapeError("upsample_nearest expects (B,C,H,W)")
    B, C, H, W = x.data.shape
    out = Tensor(x.data.repeat(k, axis=2).repeat(k, axis=3))

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if x.requires_grad:
            _accum(x, g.reshape(B, C, H, k, W, k).sum(axis=(3, 5)))

    return _finish(out, (x,), bw, "upsample_nearest")


# ---------------------------------------------------------------------------
# nonlinearities and normalisation


def softmax(x) -> Tensor:
    """Row softmax over the trailing axis, max-shifted for stability."""
    x = astensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if x.requires_grad:
            _accum(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _finish(out, (x,), bw, "softmax")


def relu(x) -> Tensor:
    x = astensor(x)
    out = Tensor(np.maximum(x.data, 0.0))

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if x.requires_grad:
            _accum(x, g * (x.data > 0.0))

    return _finish(out, (x,), bw, "relu")


def sigmoid(x) -> Tensor:
    x = astensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if x.requires_grad:
            _accum(x, g * y * (1.0 - y))

    return _finish(out, (x,), bw, "sigmoid")


def silu(x) -> Tensor:
    x = astensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(x.data * s)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if x.requires_grad:
            _accum(x, g * s * (1.0 + x.data * (1.0 - s)))

    return _finish(out, (x,), bw, "silu")


def tanh(x) -> Tensor:
    x = astensor(x)
    y = np.tanh(x.data)
    out = Tensor(y)

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if x.requires_grad:
            _accum(x, g * (1.0 - y * y))

    return _finish(out, (x,), bw, "tanh")


_GN_EPS = 1e-5


def group_norm(x, gamma, beta, groups: int) -> Tensor:
    """Normalise (B,C,H,W) over channel groups, then per-channel affine."""
    x, gamma, beta = astensor(x), astensor(gamma), astensor(beta)
    if x.data.ndim != 4:
        raise ShapeError("group_norm expects (B,C,H,W)")
    B, C, H, W = x.data.shape
    if C % groups:
        raise ShapeError(f"group_norm: {C} channels not divisible by {groups} groups")
    if gamma.data.shape != (C,) or beta.data.shape != (C,):
        raise ShapeError("group_norm: gamma/beta must be (C,)")
    xg = x.data.reshape(B, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    # one-pass variance: E[x^2] - E[x]^2 (cheaper than ndarray.var)
    var = np.einsum("bgk,bgk->bg", xg, xg)[:, :, None] / xg.shape[2] - mu * mu
    np.maximum(var, 0.0, out=var)
    inv = 1.0 / np.sqrt(var + _GN_EPS)
    xhat = ((xg - mu) * inv).reshape(B, C, H, W)
    out = Tensor(xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None])

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = (g * gamma.data[None, :, None, None]).reshape(B, groups, -1)
            xh = xhat.reshape(B, groups, -1)
            m1 = dxhat.mean(axis=2, keepdims=True)
            m2 = (dxhat * xh).mean(axis=2, keepdims=True)
            dx = (dxhat - m1 - xh * m2) * inv
            _accum(x, dx.reshape(B, C, H, W))

    return _finish(out, (x, gamma, beta), bw, "group_norm")


# ---------------------------------------------------------------------------
# reductions


def mse(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse: {a.data.shape} vs {b.data.shape}")
    d = a.data - b.data
    n = d.size
    out = Tensor(np.asarray((d * d).mean()))

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        coeff = g * 2.0 / n
        if a.requires_grad:
            _accum(a, coeff * d)
        if b.requires_grad:
            _accum(b, -coeff * d)

    return _finish(out, (a, b), bw, "mse")


def tsum(a) -> Tensor:
    a = astensor(a)
    out = Tensor(np.asarray(a.data.sum()))

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if a.requires_grad:
            _accum(a, np.full(a.data.shape, float(g)))

    return _finish(out, (a,), bw, "sum")


def mean(a) -> Tensor:
    a = astensor(a)
    return scale(tsum(a), 1.0 / a.data.size)


def frobenius_norm(a) -> Tensor:
    """sqrt(sum of squares); subgradient 0 at the origin."""
    a = astensor(a)
    n = float(np.sqrt((a.data * a.data).sum()))
    out = Tensor(np.asarray(n))

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if a.requires_grad:
            if n > 0.0:
                _accum(a, (float(g) / n) * a.data)
            else:
                _accum(a, np.zeros_like(a.data))

    return _finish(out, (a,), bw, "frobenius_norm")


# ---------------------------------------------------------------------------
# shape manipulation and lookup


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    out = Tensor(a.data.reshape(shape))

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))

    return _finish(out, (a,), bw, "reshape")


def transpose(a, axes) -> Tensor:
    a = astensor(a)
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if a.requires_grad:
            _accum(a, g.transpose(inv))

    return _finish(out, (a,), bw, "transpose")


def embed(table, ids) -> Tensor:
    """Row lookup: table (V,D), ids int array (...,) -> (..., D)."""
    table = astensor(table)
    ids_arr = np.asarray(ids)
    if not np.issubdtype(ids_arr.dtype, np.integer):
        raise ShapeError("embed ids must be integers")
    if ids_arr.min() < 0 or ids_arr.max() >= table.data.shape[0]:
        raise ShapeError("embed ids out of range")
    out = Tensor(table.data[ids_arr])

    def bw():
        g = _need_grad(out)
        if g is None:
            return
        if table.requires_grad:
            dt = np.zeros_like(table.data)
            np.add.at(dt, ids_arr.ravel(), g.reshape(-1, table.data.shape[1]))
            _accum(table, dt)

    return _finish(out, (table,), bw, "embed")


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam over a named parameter dict, reading grads off the tensors."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"adam: grad shape {g.shape} != param shape {p.data.shape} for '{k}'")
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# checkpoint format: magic "GLAB1", then per-parameter records of
# (u32 name length, utf-8 name, u32 rank, u32 dims..., f64 values...),
# everything little-endian.  Round-trips bit-exactly.

CHECKPOINT_MAGIC = b"GLAB1"


def save_checkpoint(path, params: Mapping[str, "Tensor | np.ndarray"]) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        for name, p in params.items():
            # asarray keeps rank-0 arrays rank-0 (ascontiguousarray would not)
            arr = np.asarray(p.data if isinstance(p, Tensor) else p, dtype="<f8", order="C")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a GLAB1 checkpoint")
        while True:
            head = f.read(4)
            if not head:
                break
            (nlen,) = struct.unpack("<I", head)
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            count = int(np.prod(dims)) if rank else 1
            buf = f.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated record for '{name}'")
            out[name] = np.frombuffer(buf, dtype="<f8").reshape(dims).astype(np.float64)
    return out
