"""Central finite-difference verification of analytic gradients.

Each checked unit builds a scalar loss from a set of leaf tensors; analytic
gradients come from backward(), numeric ones from central differences in
float64.  Coordinates are subsampled deterministically, at most 200 per
unit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attention as attn
from . import tensor as T
from . import tffm, twfem
from .decoder import sine_positional_encoding, td_block
from .model import ModelConfig, build_model, model_forward
from .params import Registry
from .tensor import Tensor, default_dtype

STEP = 1e-4
TOL_F64 = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    passed: bool

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} max_rel_err={self.max_rel_err:.3e}"


def _sample_coords(leaves, budget, rng):
    """At most `budget` (leaf, flat-index) pairs spread over all leaves."""
    sizes = np.array([leaf.data.size for leaf in leaves])
    total = int(sizes.sum())
    if total <= budget:
        picks = np.arange(total)
    else:
        picks = np.sort(rng.choice(total, size=budget, replace=False))
    bounds = np.cumsum(sizes)
    out = [[] for _ in leaves]
    for p in picks:
        li = int(np.searchsorted(bounds, p, side="right"))
        out[li].append(int(p - (bounds[li - 1] if li else 0)))
    return out


def check_unit(name, loss_fn, leaves, tol=TOL_F64, step=STEP, budget=200, seed=0):
    """Compare backward() grads of loss_fn() against central differences."""
    rng = np.random.default_rng(seed)
    for t in leaves:
        t.grad = None
    loss = loss_fn()
    T.backward(loss)
    max_err = 0.0
    coords = _sample_coords(leaves, budget, rng)
    for leaf, idxs in zip(leaves, coords):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + step
            hi = loss_fn().item()
            flat[idx] = orig - step
            lo = loss_fn().item()
            flat[idx] = orig
            numeric = (hi - lo) / (2.0 * step)
            a = float(analytic.reshape(-1)[idx])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            max_err = max(max_err, err)
    return CheckResult(name, max_err, max_err < tol)


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _proj_loss(out, w):
    return T.tensor_sum(T.mul(out, w))


def run_all(budget=200, seed=0, units=None):
    """Gradient-check every primitive and the composite blocks; float64.

    `units` optionally restricts the run to the named subset.
    """
    results = []
    with default_dtype(np.float64):
        rng = np.random.default_rng(seed)

        def unit(name, loss_fn, leaves, b=budget):
            if units is not None and name not in units:
                return
            results.append(check_unit(name, loss_fn, leaves, budget=b, seed=seed))

        a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
        w = Tensor(rng.standard_normal((3, 2)))
        unit("matmul", lambda: _proj_loss(T.matmul(a, b), w), [a, b])

        x = _rand(rng, 4, 5)
        w45 = Tensor(rng.standard_normal((4, 5)))
        unit("softmax_row", lambda: _proj_loss(T.softmax(x, axis=1), w45), [x])
        unit("softmax_col", lambda: _proj_loss(T.softmax(x, axis=0), w45), [x])

        g_ln, b_ln = _rand(rng, 5), _rand(rng, 5)
        unit("layer_norm", lambda: _proj_loss(T.layer_norm(x, g_ln, b_ln), w45), [x, g_ln, b_ln])

        r45 = _rand(rng, 4, 5)
        unit(
            "residual_layer_norm",
            lambda: _proj_loss(T.residual_layer_norm(x, r45, g_ln, b_ln), w45),
            [x, r45, g_ln, b_ln],
        )
        fw1, fb1 = _rand(rng, 5, 7), _rand(rng, 7)
        fw2, fb2 = _rand(rng, 7, 5), _rand(rng, 5)
        unit(
            "ffn",
            lambda: _proj_loss(T.ffn(x, fw1, fb1, fw2, fb2), w45),
            [x, fw1, fb1, fw2, fb2],
        )

        xc = _rand(rng, 2, 6, 6)
        wc = _rand(rng, 3, 2, 3, 3)
        bc = _rand(rng, 3)
        wcp = Tensor(rng.standard_normal((3, 6, 6)))
        unit(
            "conv2d",
            lambda: _proj_loss(T.conv2d(xc, wc, bc, stride=1, pad=1), wcp),
            [xc, wc, bc],
        )
        wmp = Tensor(rng.standard_normal((2, 3, 3)))
        unit("maxpool2d", lambda: _proj_loss(T.maxpool2d(xc), wmp), [xc])
        wup = Tensor(rng.standard_normal((2, 12, 12)))
        unit("bilinear_upsample", lambda: _proj_loss(T.bilinear_upsample(xc, 2), wup), [xc])

        unit("relu", lambda: _proj_loss(T.relu(x), w45), [x])
        unit("sigmoid", lambda: _proj_loss(T.sigmoid(x), w45), [x])
        bias = _rand(rng, 5)
        unit("add_broadcast", lambda: _proj_loss(T.add(x, bias), w45), [x, bias])

        p = Tensor(rng.uniform(0.05, 0.95, size=(4, 4)), requires_grad=True)
        s = Tensor((rng.uniform(size=(4, 4)) > 0.5).astype(np.float64))
        unit("bce_mean", lambda: T.bce_mean(p, s), [p])

        c = 8
        q, k, v = _rand(rng, 3, c), _rand(rng, 5, c), _rand(rng, 5, c)
        wq3 = Tensor(rng.standard_normal((3, c)))
        unit(
            "dot_product_attention",
            lambda: _proj_loss(attn.dot_product_attention(q, k, v), wq3),
            [q, k, v],
        )
        unit(
            "efficient_attention",
            lambda: _proj_loss(attn.efficient_attention(q, k, v), wq3),
            [q, k, v],
        )

        reg = Registry(seed)
        mh = reg.multi_head("mh", c, 2)
        mh_leaves = [q, k, v] + [t for t in reg.tensors.values()]
        unit("multi_head", lambda: _proj_loss(attn.multi_head(q, k, v, mh), wq3), mh_leaves)

        reg2 = Registry(seed + 1)
        blk = reg2.decoder_block("td", c, 2)
        px = Tensor(rng.standard_normal((3, c)) * 0.1)
        py = Tensor(rng.standard_normal((5, c)) * 0.1)
        td_leaves = [q, k] + list(reg2.tensors.values())
        unit(
            "td_block",
            lambda: _proj_loss(td_block(q, k, px, py, blk), wq3),
            td_leaves,
        )

        # composite TE wiring: enhance a tiny pyramid end to end
        reg3 = Registry(seed + 2)
        te = tuple(reg3.decoder_block(f"te{i}", c, 2) for i in (3, 4, 5))
        dims = ((4, 4), (2, 2), (1, 1))
        f3, f4, f5 = _rand(rng, 16, c), _rand(rng, 4, c), _rand(rng, 1, c)
        pyr = twfem.FeaturePyramid("rgb", c, dims, f3, f4, f5)
        wte = Tensor(rng.standard_normal((16, c)))

        def te_loss():
            enh = twfem.enhance_modality(pyr, te)
            return _proj_loss(enh.f3e, wte)

        unit("te_block_composite", te_loss, [f3, f4, f5] + list(reg3.tensors.values()))

        # composite TF block against a two-segment memory
        reg4 = Registry(seed + 3)
        tf = reg4.decoder_block("tf", c, 2)
        enh_r = twfem.EnhancedPyramid("rgb", c, dims, f3, f4, f5)
        g3, g4, g5 = _rand(rng, 16, c), _rand(rng, 4, c), _rand(rng, 1, c)
        enh_d = twfem.EnhancedPyramid("depth", c, dims, g3, g4, g5)
        f_init = _rand(rng, 16, c)
        pos3 = sine_positional_encoding(4, 4, c)

        def tf_loss():
            mem = tffm.build_memory(enh_r, enh_d)
            return _proj_loss(tffm.tf_block(f_init, mem, pos3, tf), wte)

        unit(
            "tf_block_composite",
            tf_loss,
            [f_init, f3, g3] + list(reg4.tensors.values()),
        )

        # full tiny model
        cfg = ModelConfig(c=16, t=2, heads=2, input_size=32, seed=seed)
        params = build_model(cfg)
        rgb = Tensor(rng.uniform(size=(3, 32, 32)))
        depth = Tensor(rng.uniform(size=(1, 32, 32)))
        gt = Tensor((rng.uniform(size=(32, 32)) > 0.5).astype(np.float64))

        def model_loss():
            out = model_forward(rgb, depth, params, gt)
            return out.total_loss

        unit(
            "full_model",
            model_loss,
            list(params.tensors.values()),
            b=min(budget, 120),
        )
    return results
