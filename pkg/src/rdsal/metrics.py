"""Saliency evaluation: MAE, adaptive F-measure, S-measure, E-measure.

All four operate on a predicted probability map P in [0,1] and a binary
ground truth S of the same shape, and all return values in [0,1].
Population statistics are used throughout; the adaptive threshold is
min(2*mean(P), 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

_EPS = np.finfo(np.float64).eps
BETA_SQ = 0.3
S_ALPHA = 0.5


def _validate(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"metric inputs differ in shape: {pred.shape} vs {gt.shape}")
    if not np.isin(gt, (0.0, 1.0)).all():
        raise ShapeError("ground truth must be strictly binary")
    return pred, gt


def adaptive_threshold(pred):
    return min(2.0 * float(pred.mean()), 1.0)


def _binarize(pred):
    """Adaptive binarization; a zero threshold selects only positive pixels
    so an all-zero prediction yields an empty foreground."""
    tau = adaptive_threshold(pred)
    return pred >= tau if tau > 0 else pred > 0


def mae(pred, gt):
    pred, gt = _validate(pred, gt)
    return float(np.abs(pred - gt).mean())


def f_measure_adaptive(pred, gt):
    pred, gt = _validate(pred, gt)
    binary = _binarize(pred)
    tp = float(np.logical_and(binary, gt == 1).sum())
    nb = float(binary.sum())
    ns = float(gt.sum())
    precision = tp / nb if nb > 0 else 0.0
    recall = tp / ns if ns > 0 else 0.0
    denom = BETA_SQ * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + BETA_SQ) * precision * recall / denom


def _object_score(x):
    if x.size == 0:
        return 0.0
    m = x.mean()
    s = x.std()  # population
    return 2.0 * m / (m * m + 1.0 + s + _EPS)


def _s_object(pred, gt):
    fg = gt == 1
    mu = gt.mean()
    o_fg = _object_score(pred[fg])
    o_bg = _object_score((1.0 - pred)[~fg])
    return mu * o_fg + (1.0 - mu) * o_bg


def _centroid(gt):
    ys, xs = np.nonzero(gt)
    if ys.size == 0:
        h, w = gt.shape
        return h // 2, w // 2
    return int(round(ys.mean())), int(round(xs.mean()))


def _ssim_block(x, y):
    n = x.size
    if n == 0:
        return 1.0
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).sum() / n
    vy = ((y - my) ** 2).sum() / n
    cxy = ((x - mx) * (y - my)).sum() / n
    alpha = 4.0 * mx * my * cxy
    beta = (mx * mx + my * my) * (vx + vy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0 else 0.0


def _s_region(pred, gt):
    cy, cx = _centroid(gt)
    h, w = gt.shape
    cy, cx = cy + 1, cx + 1  # cut points
    area = h * w
    score = 0.0
    for rows in (slice(0, cy), slice(cy, h)):
        for cols in (slice(0, cx), slice(cx, w)):
            pb, gb = pred[rows, cols], gt[rows, cols]
            score += (pb.size / area) * _ssim_block(pb, gb)
    return score


def s_measure(pred, gt):
    pred, gt = _validate(pred, gt)
    mu = gt.mean()
    if mu == 0:  # no foreground: reward empty predictions
        return 1.0 - float(pred.mean())
    if mu == 1:
        return float(pred.mean())
    score = S_ALPHA * _s_object(pred, gt) + (1.0 - S_ALPHA) * _s_region(pred, gt)
    return max(score, 0.0)


def e_measure(pred, gt):
    pred, gt = _validate(pred, gt)
    binary = _binarize(pred).astype(np.float64)
    if gt.mean() == 0:
        return float((1.0 - binary).mean())
    if gt.mean() == 1:
        return float(binary.mean())
    phi_b = binary - binary.mean()
    phi_s = gt - gt.mean()
    xi = 2.0 * phi_b * phi_s / (phi_b * phi_b + phi_s * phi_s + _EPS)
    enhanced = (1.0 + xi) ** 2 / 4.0
    return float(enhanced.mean())


@dataclass
class MetricReport:
    rows: list  # (label, mae, fm, sm, em)

    HEADER = ("dataset", "mae", "fm", "sm", "em")

    def to_text(self):
        lines = [f"{'dataset':<16}  {'MAE':>6} {'F_m':>6} {'S_m':>6} {'E_m':>6}"]
        for label, m, f, s, e in self.rows:
            lines.append(f"{label:<16}  {m:6.3f} {f:6.3f} {s:6.3f} {e:6.3f}")
        return "\n".join(lines)

    def to_csv(self):
        lines = [",".join(self.HEADER)]
        for label, m, f, s, e in self.rows:
            lines.append(f"{label},{m:.3f},{f:.3f},{s:.3f},{e:.3f}")
        return "\n".join(lines) + "\n"


def evaluate_pairs(pairs):
    """Arithmetic mean of per-image metrics over (pred, gt) pairs."""
    vals = np.array(
        [
            (mae(p, g), f_measure_adaptive(p, g), s_measure(p, g), e_measure(p, g))
            for p, g in pairs
        ],
        dtype=np.float64,
    )
    return tuple(vals.mean(axis=0))


def evaluate_dataset(pairs, label="dataset"):
    m, f, s, e = evaluate_pairs(pairs)
    return MetricReport([(label, m, f, s, e)])
