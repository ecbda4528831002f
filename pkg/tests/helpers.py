"""Independent straight-line oracles used across test modules.

Everything here is written directly against the math, with explicit loops
or literal formula evaluation in float64, and never calls into the library
code paths it is used to check.
"""

import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += float(a[i, p]) * float(b[p, j])
            out[i, j] = acc
    return out


def softmax_rows_ref(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_cols_ref(x):
    return softmax_rows_ref(np.asarray(x, dtype=np.float64).T).T


def attention_ref(q, k, v):
    """Literal dot-product attention: explicit weight matrix then matmul."""
    w = softmax_rows_ref(np.asarray(q, np.float64) @ np.asarray(k, np.float64).T)
    return w @ np.asarray(v, np.float64)


def efficient_attention_ref(q, k, v):
    """Literal efficient attention with the explicit c x c intermediate."""
    ctx = softmax_cols_ref(np.asarray(k, np.float64)).T @ np.asarray(v, np.float64)
    return softmax_rows_ref(np.asarray(q, np.float64)) @ ctx


def layer_norm_ref(x, gamma, beta, eps=1e-5):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        row = x[i]
        mu = row.mean()
        var = ((row - mu) ** 2).mean()
        out[i] = (row - mu) / np.sqrt(var + eps) * gamma + beta
    return out


def conv2d_loops(x, w, b, stride=1, pad=0):
    """Naive six-loop cross-correlation."""
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    xp = np.zeros((cin, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, pad : pad + h, pad : pad + wd] = x
    out = np.zeros((cout, oh, ow), dtype=np.float64)
    for co in range(cout):
        for oy in range(oh):
            for ox in range(ow):
                acc = float(b[co])
                for ci in range(cin):
                    for ky in range(kh):
                        for kx in range(kw):
                            acc += float(xp[ci, oy * stride + ky, ox * stride + kx]) * float(
                                w[co, ci, ky, kx]
                            )
                out[co, oy, ox] = acc
    return out


def bilinear_upsample_ref(x, factor):
    """Direct bilinear formula per output pixel, align_corners=False."""
    c, h, w = x.shape
    out = np.zeros((c, h * factor, w * factor), dtype=np.float64)
    for oy in range(h * factor):
        for ox in range(w * factor):
            sy = min(max((oy + 0.5) / factor - 0.5, 0.0), h - 1)
            sx = min(max((ox + 0.5) / factor - 0.5, 0.0), w - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[:, oy, ox] = (
                x[:, y0, x0] * (1 - fy) * (1 - fx)
                + x[:, y0, x1] * (1 - fy) * fx
                + x[:, y1, x0] * fy * (1 - fx)
                + x[:, y1, x1] * fy * fx
            )
    return out


def multi_head_ref(q, k, v, params):
    """Per-head efficient attention on sliced channels, then output proj."""
    qp = np.asarray(q, np.float64) @ params.wq.data + params.bq.data
    kp = np.asarray(k, np.float64) @ params.wk.data + params.bk.data
    vp = np.asarray(v, np.float64) @ params.wv.data + params.bv.data
    h = params.heads
    d = qp.shape[1] // h
    outs = [
        efficient_attention_ref(qp[:, i * d : (i + 1) * d], kp[:, i * d : (i + 1) * d], vp[:, i * d : (i + 1) * d])
        for i in range(h)
    ]
    return np.concatenate(outs, axis=1) @ params.wo.data + params.bo.data


def td_block_ref(x, y, pos_x, pos_y, params, eps=1e-5):
    """Straight-line decoder block with explicit intermediates."""

    def rl(residual, sublayer, g, b):
        return layer_norm_ref(residual + sublayer, g.data, b.data, eps)

    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    sa = multi_head_ref(x + pos_x, x + pos_x, x, params.sa)
    o_sa = rl(x, sa, params.ln1_g, params.ln1_b)
    ca = multi_head_ref(o_sa + pos_x, y + pos_y, y, params.ca)
    o_ca = rl(o_sa, ca, params.ln2_g, params.ln2_b)
    hidden = np.maximum(o_ca @ params.ffn_w1.data + params.ffn_b1.data, 0.0)
    ff = hidden @ params.ffn_w2.data + params.ffn_b2.data
    return rl(o_ca, ff, params.ln3_g, params.ln3_b)


def bce_ref(pred, target, eps=1e-7):
    p = np.clip(np.asarray(pred, np.float64), eps, 1 - eps)
    t = np.asarray(target, np.float64)
    total = 0.0
    for pi, ti in zip(p.ravel(), t.ravel()):
        total += -(ti * np.log(pi) + (1 - ti) * np.log(1 - pi))
    return total / p.size

# --- saliency metric oracles (independent straight-line implementations) ---


def mae_ref(pred, gt):
    pred = np.asarray(pred, np.float64)
    gt = np.asarray(gt, np.float64)
    total = 0.0
    for p, s in zip(pred.ravel(), gt.ravel()):
        total += abs(p - s)
    return total / pred.size


def f_adaptive_ref(pred, gt, beta_sq=0.3):
    pred = np.asarray(pred, np.float64)
    gt = np.asarray(gt, np.float64)
    tau = min(2.0 * pred.mean(), 1.0)
    binary = pred >= tau if tau > 0 else pred > 0
    tp = float(np.count_nonzero(binary & (gt == 1)))
    nb = float(np.count_nonzero(binary))
    ns = float(np.count_nonzero(gt == 1))
    prec = tp / nb if nb else 0.0
    rec = tp / ns if ns else 0.0
    denom = beta_sq * prec + rec
    return 0.0 if denom == 0 else (1 + beta_sq) * prec * rec / denom


def s_measure_ref(pred, gt, alpha=0.5):
    eps = np.finfo(np.float64).eps
    pred = np.asarray(pred, np.float64)
    gt = np.asarray(gt, np.float64)
    mu = gt.mean()
    if mu == 0:
        return 1.0 - pred.mean()
    if mu == 1:
        return pred.mean()

    def obj(x):
        if x.size == 0:
            return 0.0
        return 2.0 * x.mean() / (x.mean() ** 2 + 1.0 + x.std() + eps)

    s_o = mu * obj(pred[gt == 1]) + (1 - mu) * obj(1.0 - pred[gt == 0])

    ys, xs = np.nonzero(gt)
    cy = int(round(ys.mean())) + 1
    cx = int(round(xs.mean())) + 1
    h, w = gt.shape
    s_r = 0.0
    for pb, gb in (
        (pred[:cy, :cx], gt[:cy, :cx]),
        (pred[:cy, cx:], gt[:cy, cx:]),
        (pred[cy:, :cx], gt[cy:, :cx]),
        (pred[cy:, cx:], gt[cy:, cx:]),
    ):
        weight = pb.size / (h * w)
        if pb.size == 0:
            q = 1.0
        else:
            mx, my = pb.mean(), gb.mean()
            vx = pb.var()
            vy = gb.var()
            cxy = ((pb - mx) * (gb - my)).mean()
            a = 4.0 * mx * my * cxy
            b = (mx * mx + my * my) * (vx + vy)
            if a != 0:
                q = a / (b + eps)
            else:
                q = 1.0 if b == 0 else 0.0
        s_r += weight * q
    return max(alpha * s_o + (1 - alpha) * s_r, 0.0)


def e_measure_ref(pred, gt):
    eps = np.finfo(np.float64).eps
    pred = np.asarray(pred, np.float64)
    gt = np.asarray(gt, np.float64)
    tau = min(2.0 * pred.mean(), 1.0)
    binary = (pred >= tau if tau > 0 else pred > 0).astype(np.float64)
    if gt.mean() == 0:
        return (1.0 - binary).mean()
    if gt.mean() == 1:
        return binary.mean()
    phi_b = binary - binary.mean()
    phi_s = gt - gt.mean()
    xi = 2.0 * phi_b * phi_s / (phi_b**2 + phi_s**2 + eps)
    return (((1.0 + xi) ** 2) / 4.0).mean()
