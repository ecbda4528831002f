"""Attention scaling benchmark: wall time of EA vs dot-product attention."""

from __future__ import annotations

import time

import numpy as np

from .attention import dot_product_attention, efficient_attention
from .tensor import Tensor, track_allocations


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def bench_attention(c=32, sizes=(1024, 2048, 4096), repeats=5, seed=0):
    """Rows of (n, ea_seconds, dpa_seconds); also verifies EA never builds
    an n x n buffer.

    Each (size, method) cell keeps the minimum over `repeats` rounds, and
    the rounds sweep the whole grid so a transient load spike on a shared
    machine cannot poison every sample of one cell.
    """
    rng = np.random.default_rng(seed)
    inputs = []
    for n in sizes:
        q = Tensor(rng.standard_normal((n, c)).astype(np.float32))
        k = Tensor(rng.standard_normal((n, c)).astype(np.float32))
        v = Tensor(rng.standard_normal((n, c)).astype(np.float32))
        with track_allocations() as log:
            efficient_attention(q, k, v)
        square = [s for _, s in log if len(s) == 2 and s[0] == n and s[1] == n]
        if square:
            raise AssertionError(f"efficient attention allocated an {n}x{n} buffer")
        inputs.append((n, q, k, v))
    best = {(n, m): float("inf") for n, _, _, _ in inputs for m in ("ea", "dpa")}
    for _ in range(repeats):
        for n, q, k, v in inputs:
            best[n, "ea"] = min(best[n, "ea"], _timed(lambda: efficient_attention(q, k, v)))
            best[n, "dpa"] = min(
                best[n, "dpa"], _timed(lambda: dot_product_attention(q, k, v))
            )
    return [(n, best[n, "ea"], best[n, "dpa"]) for n, _, _, _ in inputs]


def bench_csv(rows):
    lines = ["n,ea_seconds,dpa_seconds"]
    for n, ea_t, dpa_t in rows:
        lines.append(f"{n},{ea_t:.6f},{dpa_t:.6f}")
    return "\n".join(lines) + "\n"


def growth_factors(rows):
    """Per-doubling time ratios for (ea, dpa)."""
    ea = [r[1] for r in rows]
    dpa = [r[2] for r in rows]
    ea_f = [b / a for a, b in zip(ea, ea[1:])]
    dpa_f = [b / a for a, b in zip(dpa, dpa[1:])]
    return ea_f, dpa_f
