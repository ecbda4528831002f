"""Dot-product attention, efficient (linear-complexity) attention, multi-head.

Token matrices are n x c Tensors: one row per spatial position.  The
efficient variant computes softmax_rows(Q) @ (softmax_cols(K)^T @ V) and
never materializes an n_Q x n_P matrix; its largest transient is c x c.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


def _check_qkv(q, k, v):
    for t in (q, k, v):
        if t.data.ndim not in (2, 3):
            raise ShapeError("attention inputs must be token matrices (optional batch axis)")
    if q.data.shape[-1] != k.data.shape[-1] or k.data.shape[-1] != v.data.shape[-1]:
        raise ShapeError(
            f"attention: channel mismatch Q{q.shape} K{k.shape} V{v.shape}"
        )
    if k.data.shape[-2] != v.data.shape[-2]:
        raise ShapeError(
            f"attention: K has {k.data.shape[-2]} positions but V has {v.data.shape[-2]}"
        )
    if not (q.data.shape[:-2] == k.data.shape[:-2] == v.data.shape[:-2]):
        raise ShapeError(f"attention: batch mismatch Q{q.shape} K{k.shape} V{v.shape}")


def dot_product_attention(q, k, v):
    """softmax_rows(Q K^T) V; allocates the full n_Q x n_P weight matrix."""
    _check_qkv(q, k, v)
    weights = T.softmax(T.matmul(q, T.transpose2d(k)), axis=1)
    return T.matmul(weights, v)


def efficient_attention(q, k, v):
    """softmax_rows(Q) (softmax_cols(K)^T V); transient memory O(c^2)."""
    _check_qkv(q, k, v)
    context = T.matmul(T.transpose2d(T.softmax(k, axis=0)), v)  # c x c
    return T.matmul(T.softmax(q, axis=1), context)


@dataclass
class MultiHeadParams:
    heads: int
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    @classmethod
    def identity(cls, c, heads=1):
        """Identity projections with zero bias (testing aid)."""
        eye = np.eye(c)
        zero = np.zeros(c)
        mk = lambda a: Tensor(np.array(a))
        return cls(heads, mk(eye), mk(zero), mk(eye), mk(zero), mk(eye), mk(zero), mk(eye), mk(zero))


def _softmax_np(x, axis):
    s = x - x.max(axis=axis, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=axis, keepdims=True)
    return s


def multi_head(q, k, v, params):
    """Project Q/K/V, run efficient attention per channel-split head, concat
    the heads and project out.

    Fused into a single graph node (hand-written backward) to keep the op
    count low; the per-head transient is still only n x d plus d x d.
    """
    _check_qkv(q, k, v)
    c = q.data.shape[-1]
    h = params.heads
    if c % h:
        raise ConfigError(f"multi_head: channels {c} not divisible by {h} heads")
    d = c // h

    qp = q.data @ params.wq.data + params.bq.data
    kp = k.data @ params.wk.data + params.bk.data
    vp = v.data @ params.wv.data + params.bv.data
    T._record_alloc("multi_head.proj", qp)

    def split(x):  # (..., n, c) -> (..., h, n, d), one matmul slab per head
        return np.swapaxes(x.reshape(x.shape[:-1] + (h, d)), -3, -2)

    def merge(xh):  # (..., h, n, d) -> (..., n, c)
        sw = np.ascontiguousarray(np.swapaxes(xh, -3, -2))
        return sw.reshape(sw.shape[:-2] + (c,))

    vh = split(vp)
    a = _softmax_np(split(qp), -1)  # row-stochastic left factor
    b = _softmax_np(split(kp), -2)  # column-stochastic key factor
    ctx = np.swapaxes(b, -1, -2) @ vh  # ... x h x d x d
    T._record_alloc("multi_head.context", ctx)
    merged = merge(a @ ctx)
    out = merged @ params.wo.data + params.bo.data
    T._record_alloc("multi_head.out", out)

    def bwd(g):
        gh = split(g @ params.wo.data.T)
        ga = gh @ np.swapaxes(ctx, -1, -2)
        gctx = np.swapaxes(a, -1, -2) @ gh
        gb = vh @ np.swapaxes(gctx, -1, -2)
        gvp = merge(b @ gctx)
        gqp = merge((ga - (ga * a).sum(axis=-1, keepdims=True)) * a)
        gkp = merge((gb - (gb * b).sum(axis=-2, keepdims=True)) * b)
        return (
            (q, gqp @ params.wq.data.T),
            (k, gkp @ params.wk.data.T),
            (v, gvp @ params.wv.data.T),
            (params.wq, T._wgrad(q.data, gqp)),
            (params.bq, T._sum_leading(gqp)),
            (params.wk, T._wgrad(k.data, gkp)),
            (params.bk, T._sum_leading(gkp)),
            (params.wv, T._wgrad(v.data, gvp)),
            (params.bv, T._sum_leading(gvp)),
            (params.wo, T._wgrad(merged, g)),
            (params.bo, T._sum_leading(g)),
        )

    parents = (
        q, k, v,
        params.wq, params.bq, params.wk, params.bk,
        params.wv, params.bv, params.wo, params.bo,
    )
    return Tensor(out, parents=parents, backward=bwd)
