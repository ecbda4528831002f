"""Synthetic RGB-D saliency dataset.

Each sample holds one salient shape plus color distractors.  Depth is the
informative cue: the salient object is rendered nearest (highest depth
value) over a noisy planar gradient, and at least one distractor shares the
object's color but sits at background depth, so color alone cannot solve
the task.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import ImageIOError
from .netpbm import read_mask, read_pgm, read_ppm, write_pgm, write_ppm


@dataclass
class SyntheticSample:
    rgb: np.ndarray  # 3 x H x W in [0,1]
    depth: np.ndarray  # 1 x H x W in [0,1]
    gt: np.ndarray  # H x W binary
    seed: int
    index: int


def _shape_mask(size, rng, min_half=0.09, max_half=0.20):
    """Random ellipse or axis-aligned rectangle mask."""
    kind = rng.integers(0, 2)
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    ay, ax = rng.uniform(min_half, max_half, size=2) * size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    if kind == 0:
        mask = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
    else:
        mask = (np.abs(yy - cy) <= ay) & (np.abs(xx - cx) <= ax)
    return mask


def _pick_color(rng, avoid=None, min_dist=0.35):
    for _ in range(64):
        color = rng.uniform(0.05, 0.95, size=3)
        if avoid is None or np.abs(color - avoid).max() >= min_dist:
            return color
    return color


def generate_sample(size, seed, index):
    rng = np.random.default_rng([seed, index])
    bg_color = rng.uniform(0.2, 0.8, size=3)

    # planar depth gradient, well below the object's depth band
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    direction = rng.uniform(-1.0, 1.0, size=2)
    plane = direction[0] * yy + direction[1] * xx
    span = plane.max() - plane.min()
    plane = (plane - plane.min()) / (span if span > 0 else 1.0)
    depth = 0.05 + 0.45 * plane + rng.normal(0.0, 0.02, size=(size, size))

    rgb = bg_color[:, None, None] + rng.normal(0.0, 0.05, size=(3, size, size))

    gt = _shape_mask(size, rng)
    obj_color = _pick_color(rng, avoid=bg_color)

    n_distractors = int(rng.integers(1, 4))
    for d in range(n_distractors):
        for _ in range(32):
            dmask = _shape_mask(size, rng, min_half=0.05, max_half=0.12)
            if not (dmask & gt).any():
                break
        # the first distractor is camouflaged: same color, background depth
        color = obj_color if d == 0 else _pick_color(rng)
        rgb[:, dmask] = color[:, None] + rng.normal(0.0, 0.03, size=(3, int(dmask.sum())))
        depth[dmask] = rng.uniform(0.15, 0.45) + rng.normal(0.0, 0.02, size=int(dmask.sum()))

    rgb[:, gt] = obj_color[:, None] + rng.normal(0.0, 0.03, size=(3, int(gt.sum())))
    depth[gt] = 0.9 + rng.normal(0.0, 0.02, size=int(gt.sum()))

    rgb = np.clip(rgb, 0.0, 1.0).astype(np.float32)
    depth = np.clip(depth, 0.0, 1.0).astype(np.float32)[None]
    return SyntheticSample(rgb, depth, gt.astype(np.float32), seed, index)


def sample_paths(directory, index):
    stem = os.path.join(directory, f"sample_{index:04d}")
    return f"{stem}_rgb.ppm", f"{stem}_depth.pgm", f"{stem}_gt.pgm"


def generate_dataset(n, size, seed, out_dir):
    """Write n samples as PPM/PGM triples; deterministic per (n, size, seed)."""
    os.makedirs(out_dir, exist_ok=True)
    for i in range(n):
        s = generate_sample(size, seed, i)
        rgb_p, depth_p, gt_p = sample_paths(out_dir, i)
        write_ppm(rgb_p, s.rgb)
        write_pgm(depth_p, s.depth[0])
        write_pgm(gt_p, s.gt)
    return out_dir


def load_dataset(directory):
    """Load every sample_NNNN triple found in directory, sorted by index."""
    pat = re.compile(r"sample_(\d{4})_rgb\.ppm$")
    indices = sorted(
        int(m.group(1)) for f in os.listdir(directory) if (m := pat.match(f))
    )
    if not indices:
        raise ImageIOError(f"no sample_*_rgb.ppm files found in {directory}")
    samples = []
    for i in indices:
        rgb_p, depth_p, gt_p = sample_paths(directory, i)
        samples.append(
            SyntheticSample(read_ppm(rgb_p), read_pgm(depth_p)[None], read_mask(gt_p), -1, i)
        )
    return samples
