"""Minimal dense tensor with reverse-mode automatic differentiation.

Every value flowing through the network (feature maps, token matrices,
predictions, losses) is a `Tensor` wrapping a numpy array.  Primitive ops
record a backward closure; `backward()` walks the recorded graph in reverse
topological order with a fixed, sequential accumulation order so repeated
runs are bit-identical.

Element type defaults to float32; switch to float64 via `set_default_dtype`
for finite-difference gradient checks.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, UsageError

_default_dtype = np.float32


def set_default_dtype(dtype):
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"unsupported element type {dtype}")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


@contextmanager
def default_dtype(dtype):
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


# Debug allocation accounting: while a tracker is active every primitive
# records the shape of each buffer it materializes.  Used by the attention
# complexity checks to prove no n_Q x n_P matrix is ever allocated.
_alloc_log = None


@contextmanager
def track_allocations():
    global _alloc_log
    prev = _alloc_log
    _alloc_log = []
    try:
        yield _alloc_log
    finally:
        _alloc_log = prev


def _record_alloc(tag, arr):
    if _alloc_log is not None:
        _alloc_log.append((tag, tuple(arr.shape)))


class Tensor:
    """Dense n-d value, optionally carrying a gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_default_dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return not self._parents

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)


def _topo_order(root):
    """Deterministic post-order over the graph below `root`."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            stack.append((p, False))
    return order


def backward(loss):
    """Populate gradients of every requires_grad leaf reachable from `loss`.

    Leaf gradients accumulate across calls (reset with `zero_grad`);
    intermediate gradients are overwritten each call.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        if node._backward is not None:
            for parent, pg in node._backward(g):
                acc = grads.get(id(parent))
                if acc is None:
                    grads[id(parent)] = pg if pg.flags.owndata else pg.copy()
                else:
                    acc += pg
    for node in order:
        g = grads.get(id(node))
        if g is None:
            continue
        if node.is_leaf and node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        else:
            node.grad = g


# ---------------------------------------------------------------------------
# helpers


def _sum_leading(g):
    """Sum over every axis except the last (bias/gain gradients)."""
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def _wgrad(x, g):
    """Weight gradient x^T g contracted over all leading axes (one gemm)."""
    return x.reshape(-1, x.shape[-1]).T @ np.ascontiguousarray(g).reshape(-1, g.shape[-1])


def _unbroadcast(g, shape):
    """Reduce gradient `g` back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _axis_2d(axis):
    if axis in (1, "row", "rows"):
        return 1
    if axis in (0, "column", "columns", "col"):
        return 0
    raise ConfigError(f"softmax axis must be row/1 or column/0, got {axis!r}")


# ---------------------------------------------------------------------------
# elementwise / arithmetic primitives


def add(a, b):
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}")
    _record_alloc("add", out)

    def bwd(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return Tensor(out, parents=(a, b), backward=bwd)


def sub(a, b):
    return add(a, scale(b, -1.0))


def mul(a, b):
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}")
    _record_alloc("mul", out)

    def bwd(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return Tensor(out, parents=(a, b), backward=bwd)


def scale(a, s):
    s = float(s)
    out = a.data * s
    _record_alloc("scale", out)

    def bwd(g):
        return ((a, g * s),)

    return Tensor(out, parents=(a,), backward=bwd)


def relu(a):
    out = np.maximum(a.data, 0)
    _record_alloc("relu", out)

    def bwd(g):
        return ((a, g * (a.data > 0)),)

    return Tensor(out, parents=(a,), backward=bwd)


def sigmoid(a):
    out = np.empty_like(a.data)
    np.negative(np.abs(a.data), out=out)
    np.exp(out, out=out)
    # stable two-branch sigmoid
    pos = a.data >= 0
    out = np.where(pos, 1.0 / (1.0 + out), out / (1.0 + out))
    _record_alloc("sigmoid", out)

    def bwd(g):
        return ((a, g * out * (1.0 - out)),)

    return Tensor(out, parents=(a,), backward=bwd)


def tensor_sum(a):
    out = a.data.sum(dtype=a.data.dtype).reshape(())

    def bwd(g):
        return ((a, np.broadcast_to(g, a.data.shape).copy()),)

    return Tensor(np.asarray(out), parents=(a,), backward=bwd)


def tensor_mean(a):
    n = a.data.size
    out = np.asarray(a.data.sum(dtype=a.data.dtype) / n)

    def bwd(g):
        return ((a, np.broadcast_to(g / n, a.data.shape).copy()),)

    return Tensor(out, parents=(a,), backward=bwd)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape):
    out = a.data.reshape(shape)
    old = a.data.shape

    def bwd(g):
        return ((a, g.reshape(old)),)

    return Tensor(out, parents=(a,), backward=bwd)


def transpose2d(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose2d expects a matrix, got shape {a.shape}")
    out = a.data.T

    def bwd(g):
        return ((a, g.T.copy()),)

    return Tensor(out, parents=(a,), backward=bwd)


def swap_last2(a):
    """Exchange the last two axes (matrix transpose with leading batch dims)."""
    if a.data.ndim < 2:
        raise ShapeError(f"swap_last2 needs at least 2 axes, got shape {a.shape}")
    out = a.data.swapaxes(-1, -2)

    def bwd(g):
        return ((a, g.swapaxes(-1, -2)),)

    return Tensor(out, parents=(a,), backward=bwd)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise UsageError("concat of empty list")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    _record_alloc("concat", out)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pairs = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pairs.append((t, g[tuple(idx)].copy()))
        return tuple(pairs)

    return Tensor(out, parents=tuple(tensors), backward=bwd)


def narrow(a, axis, start, length):
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx].copy()
    _record_alloc("narrow", out)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return ((a, full),)

    return Tensor(out, parents=(a,), backward=bwd)


# ---------------------------------------------------------------------------
# matrix / normalization primitives


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = a.data @ b.data
    _record_alloc("matmul", out)

    def bwd(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return Tensor(out, parents=(a, b), backward=bwd)


def softmax(a, axis):
    if np.isnan(a.data).any():
        raise NumericError("softmax: NaN in input")
    ax = _axis_2d(axis) if a.data.ndim == 2 else axis
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    np.exp(shifted, out=shifted)
    out = shifted / shifted.sum(axis=ax, keepdims=True)
    _record_alloc("softmax", out)

    def bwd(g):
        dot = (g * out).sum(axis=ax, keepdims=True)
        return ((a, (g - dot) * out),)

    return Tensor(out, parents=(a,), backward=bwd)


def layer_norm(x, gamma, beta, eps=1e-5):
    if x.data.ndim < 2:
        raise ShapeError(f"layer_norm expects n x c input, got {x.shape}")
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"layer_norm: gamma/beta must have shape ({c},), got {gamma.shape}/{beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    _record_alloc("layer_norm", out)

    def bwd(g):
        gx_hat = g * gamma.data
        # gx = inv * (gx_hat - mean(gx_hat) - xhat * mean(gx_hat * xhat))
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        gx = (gx_hat - m1 - xhat * m2) * inv
        return (
            (x, gx),
            (gamma, _sum_leading(g * xhat)),
            (beta, _sum_leading(g)),
        )

    return Tensor(out, parents=(x, gamma, beta), backward=bwd)


def residual_layer_norm(x, r, gamma, beta, eps=1e-5):
    """layer_norm(x + r): the residual add fused into the normalization."""
    if x.data.shape != r.data.shape:
        raise ShapeError(f"residual_layer_norm: shape mismatch {x.shape} vs {r.shape}")
    if x.data.ndim < 2:
        raise ShapeError(f"residual_layer_norm expects n x c input, got {x.shape}")
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"residual_layer_norm: gamma/beta must have shape ({c},), "
            f"got {gamma.shape}/{beta.shape}"
        )
    s = x.data + r.data
    mu = s.mean(axis=-1, keepdims=True)
    xc = s - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    _record_alloc("residual_layer_norm", out)

    def bwd(g):
        gx_hat = g * gamma.data
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        gs = (gx_hat - m1 - xhat * m2) * inv
        return (
            (x, gs),
            (r, gs.copy()),
            (gamma, _sum_leading(g * xhat)),
            (beta, _sum_leading(g)),
        )

    return Tensor(out, parents=(x, r, gamma, beta), backward=bwd)


def ffn(x, w1, b1, w2, b2):
    """Two-layer feedforward relu(x w1 + b1) w2 + b2, fused into one node."""
    if x.data.ndim < 2 or x.data.shape[-1] != w1.data.shape[0]:
        raise ShapeError(f"ffn: incompatible shapes {x.shape} x {w1.shape}")
    if w1.data.shape[1] != w2.data.shape[0]:
        raise ShapeError(f"ffn: hidden width mismatch {w1.shape} vs {w2.shape}")
    h_pre = x.data @ w1.data + b1.data
    hidden = np.maximum(h_pre, 0)
    out = hidden @ w2.data + b2.data
    _record_alloc("ffn", out)

    def bwd(g):
        gh = g @ w2.data.T
        gh *= h_pre > 0
        return (
            (x, gh @ w1.data.T),
            (w1, _wgrad(x.data, gh)),
            (b1, _sum_leading(gh)),
            (w2, _wgrad(hidden, g)),
            (b2, _sum_leading(g)),
        )

    return Tensor(out, parents=(x, w1, b1, w2, b2), backward=bwd)


def linear(x, w, b=None):
    """x[... x cin] @ w[cin x cout] + b[cout], fused."""
    if b is None:
        return matmul(x, w)
    if x.data.ndim < 2 or x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} x {w.shape}")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} != ({w.data.shape[1]},)")
    out = x.data @ w.data + b.data
    _record_alloc("linear", out)

    def bwd(g):
        return ((x, g @ w.data.T), (w, _wgrad(x.data, g)), (b, _sum_leading(g)))

    return Tensor(out, parents=(x, w, b), backward=bwd)


# ---------------------------------------------------------------------------
# spatial primitives


def conv2d(x, w, b, stride=1, pad=0):
    """Cross-correlation of x[... x cin x h x w] with w[cout x cin x kh x kw].

    The input may carry one leading batch axis; the kernel is shared.
    """
    if x.data.ndim not in (3, 4) or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 3d/4d input and 4d weight, got {x.shape}/{w.shape}")
    *lead, cin, h, wd = x.data.shape
    lead = tuple(lead)
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    if b.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({cout},)")
    if (h + 2 * pad - kh) % stride or (wd + 2 * pad - kw) % stride:
        raise ConfigError(
            f"conv2d: non-integral output extent for input {h}x{wd}, "
            f"kernel {kh}x{kw}, stride {stride}, pad {pad}"
        )
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ConfigError(f"conv2d: non-positive output extent {oh}x{ow}")

    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        # 1x1 projection: plain channel matmul (batched via broadcasting)
        xf = x.data.reshape(lead + (cin, h * wd))
        w1 = w.data.reshape(cout, cin)
        out = (w1 @ xf + b.data[:, None]).reshape(lead + (cout, h, wd))
        _record_alloc("conv2d", out)

        def bwd1(g):
            g2 = g.reshape(lead + (cout, h * wd))
            ax = tuple(range(len(lead))) + (g2.ndim - 1,)
            if lead:
                gw = (g2 @ xf.swapaxes(-1, -2)).sum(axis=0)
            else:
                gw = g2 @ xf.T
            gx = (w1.T @ g2).reshape(x.data.shape)
            return ((x, gx), (w, gw.reshape(w.data.shape)), (b, g2.sum(axis=ax)))

        return Tensor(out, parents=(x, w, b), backward=bwd1)

    zero2 = ((0, 0),) * len(lead) + ((0, 0),)
    xp = np.pad(x.data, zero2 + ((pad, pad), (pad, pad))) if pad else x.data
    # im2col: gather all kernel taps into one (cin*kh*kw) x n matrix per
    # sample so the convolution and both gradient products are single gemms
    n = oh * ow
    taps = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(-2, -1))
    taps = taps[..., ::stride, ::stride, :, :]  # lead + (cin, oh, ow, kh, kw)
    cols = np.ascontiguousarray(np.moveaxis(taps, (-2, -1), (-4, -3))).reshape(
        lead + (cin * kh * kw, n)
    )
    w2 = w.data.reshape(cout, cin * kh * kw)
    out = (w2 @ cols + b.data[:, None]).reshape(lead + (cout, oh, ow))
    _record_alloc("conv2d", out)

    need_gx = bool(x.requires_grad or x._parents)

    def bwd(g):
        g2 = g.reshape(lead + (cout, n))
        ax = tuple(range(len(lead))) + (g2.ndim - 1,)
        if lead:
            gw = (g2 @ cols.swapaxes(-1, -2)).sum(axis=0)
        else:
            gw = g2 @ cols.T
        pairs = [(w, gw.reshape(w.data.shape)), (b, g2.sum(axis=ax))]
        if need_gx:  # skip input grads flowing into constant leaves (images)
            if stride == 1 and pad < kh and pad < kw:
                # transposed convolution as one gemm: correlate g (padded to
                # "full" extent) with the flipped, channel-swapped kernel
                gp = np.pad(g, zero2 + ((kh - 1 - pad, kh - 1 - pad), (kw - 1 - pad, kw - 1 - pad)))
                gtaps = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(-2, -1))
                gcols = np.ascontiguousarray(np.moveaxis(gtaps, (-2, -1), (-4, -3))).reshape(
                    lead + (cout * kh * kw, h * wd)
                )
                wflip = np.ascontiguousarray(
                    w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
                ).reshape(cin, cout * kh * kw)
                gx = (wflip @ gcols).reshape(x.data.shape)
                pairs.append((x, gx))
            else:
                gcols = (w2.T @ g2).reshape(lead + (cin, kh, kw, n))
                gxp = np.zeros(lead + (cin, h + 2 * pad, wd + 2 * pad), dtype=g.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[
                            ...,
                            i : i + stride * (oh - 1) + 1 : stride,
                            j : j + stride * (ow - 1) + 1 : stride,
                        ] += gcols[..., i, j, :].reshape(lead + (cin, oh, ow))
                gx = gxp[..., pad : pad + h, pad : pad + wd] if pad else gxp
                pairs.append((x, np.ascontiguousarray(gx)))
        return tuple(pairs)

    return Tensor(out, parents=(x, w, b), backward=bwd)


def maxpool2d(x):
    """2x2 max pooling, stride 2; ties resolve to the first window element."""
    *lead, c, h, w = x.data.shape
    lead = tuple(lead)
    if h % 2 or w % 2:
        raise ConfigError(f"maxpool2d: extents must be even, got {h}x{w}")
    win = np.moveaxis(
        x.data.reshape(lead + (c, h // 2, 2, w // 2, 2)), -3, -2
    ).reshape(lead + (c, h // 2, w // 2, 4))
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    _record_alloc("maxpool2d", out)

    def bwd(g):
        gwin = np.zeros((arg.size, 4), dtype=g.dtype)
        gwin[np.arange(arg.size), arg.ravel()] = g.ravel()
        gx = np.moveaxis(
            gwin.reshape(lead + (c, h // 2, w // 2, 2, 2)), -2, -3
        ).reshape(x.data.shape)
        return ((x, np.ascontiguousarray(gx)),)

    return Tensor(out, parents=(x,), backward=bwd)


_interp_cache = {}


def _interp_matrix(n_in, factor, dtype):
    """(n_in*factor) x n_in interpolation matrix, align_corners=False."""
    key = (n_in, factor, np.dtype(dtype).name)
    mat = _interp_cache.get(key)
    if mat is None:
        src = np.clip((np.arange(n_in * factor, dtype=np.float64) + 0.5) / factor - 0.5, 0, n_in - 1)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        w1 = src - i0
        mat = np.zeros((n_in * factor, n_in), dtype=np.float64)
        rows = np.arange(n_in * factor)
        np.add.at(mat, (rows, i0), 1.0 - w1)
        np.add.at(mat, (rows, i1), w1)
        mat = _interp_cache.setdefault(key, mat.astype(dtype))
    return mat


def bilinear_upsample(x, factor):
    if factor not in (2, 4):
        raise ConfigError(f"bilinear_upsample: factor must be 2 or 4, got {factor}")
    h, w = x.data.shape[-2:]
    ay = _interp_matrix(h, factor, x.data.dtype)
    ax = _interp_matrix(w, factor, x.data.dtype)
    out = ay @ (x.data @ ax.T)
    _record_alloc("bilinear_upsample", out)

    def bwd(g):
        return ((x, ay.T @ g @ ax),)

    return Tensor(out, parents=(x,), backward=bwd)


# ---------------------------------------------------------------------------
# losses


def bce_mean(pred, target, eps=1e-7):
    """Mean binary cross-entropy; pred clamped to [eps, 1-eps]."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"bce_mean: shape mismatch {pred.shape} vs {target.shape}")
    p = np.clip(pred.data, eps, 1.0 - eps)
    t = target.data
    n = p.size
    out = np.asarray(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)).sum() / n)

    def bwd(g):
        inside = (pred.data > eps) & (pred.data < 1.0 - eps)
        gp = g * inside * (p - t) / (p * (1.0 - p)) / n
        return ((pred, gp.astype(pred.data.dtype)),)

    return Tensor(out, parents=(pred, target), backward=bwd)
