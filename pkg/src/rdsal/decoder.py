"""Transformer decoder block and 2D sine positional encodings.

The block follows the post-norm convention: each sublayer output passes
through residual-add + layer norm.  Positional encodings enter Q and K of
every attention module, never V.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T
from .attention import MultiHeadParams, multi_head
from .errors import ConfigError, ShapeError
from .tensor import Tensor

PE_TEMPERATURE = 10000.0


@lru_cache(maxsize=64)
def _pe_table(h, w, c, dtype_name):
    half = c // 2
    # normalized coordinates in (0, 2*pi], detection-transformer convention
    ys = (np.arange(h, dtype=np.float64) + 1.0) / h * (2.0 * np.pi)
    xs = (np.arange(w, dtype=np.float64) + 1.0) / w * (2.0 * np.pi)
    dim_t = PE_TEMPERATURE ** (2.0 * (np.arange(half) // 2) / half)

    def encode(coord):
        ang = coord[:, None] / dim_t[None, :]
        enc = np.empty_like(ang)
        enc[:, 0::2] = np.sin(ang[:, 0::2])
        enc[:, 1::2] = np.cos(ang[:, 1::2])
        return enc

    ey = encode(ys)  # h x half
    ex = encode(xs)  # w x half
    table = np.empty((h, w, c), dtype=np.float64)
    table[:, :, :half] = ey[:, None, :]
    table[:, :, half:] = ex[None, :, :]
    return np.ascontiguousarray(table.reshape(h * w, c).astype(dtype_name))


def sine_positional_encoding(h, w, c):
    """(h*w) x c table; half the channels encode y, half encode x."""
    if c % 4:
        raise ConfigError(f"positional encoding needs c divisible by 4, got {c}")
    return Tensor(_pe_table(h, w, c, T.get_default_dtype().__name__).copy())


@dataclass
class DecoderBlockParams:
    sa: MultiHeadParams
    ca: MultiHeadParams
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    ln3_g: Tensor
    ln3_b: Tensor


def td_block(x, y, pos_x, pos_y, params):
    """TD(x, y): self-attention on x, cross-attention into y, feedforward."""
    if x.data.shape[-1] != y.data.shape[-1]:
        raise ShapeError(f"td_block: channel mismatch x{x.shape} vs y{y.shape}")
    if pos_y.data.shape != y.data.shape[-pos_y.data.ndim :]:
        raise ShapeError(f"td_block: pos_y shape {pos_y.shape} != y shape {y.shape}")
    if pos_x.data.shape != x.data.shape[-pos_x.data.ndim :]:
        raise ShapeError(f"td_block: pos_x shape {pos_x.shape} != x shape {x.shape}")

    xq = T.add(x, pos_x)
    sa = multi_head(xq, xq, x, params.sa)
    o_sa = T.residual_layer_norm(x, sa, params.ln1_g, params.ln1_b)

    ca = multi_head(T.add(o_sa, pos_x), T.add(y, pos_y), y, params.ca)
    o_ca = T.residual_layer_norm(o_sa, ca, params.ln2_g, params.ln2_b)

    ff = T.ffn(o_ca, params.ffn_w1, params.ffn_b1, params.ffn_w2, params.ffn_b2)
    return T.residual_layer_norm(o_ca, ff, params.ln3_g, params.ln3_b)
