"""Global multi-scale multi-modal fusion: memory, TF stack, deep supervision.

All six enhanced token sets (3 scales x 2 modalities) are concatenated at
their native resolutions into one memory sequence; T stacked decoder blocks
refine f_init against that memory, and a single shared 1x1-conv classifier
turns every block output into a saliency map.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from . import tensor as T
from .decoder import sine_positional_encoding, td_block
from .errors import ShapeError
from .tensor import Tensor
from .twfem import predict_map, scale_encodings


@dataclass
class FusionMemory:
    tokens: Tensor  # (2 * n_345) x c
    pos: Tensor  # matching concatenated encodings
    boundaries: list  # (label, start, end) per segment


@dataclass
class FusionState:
    features: list  # f_o^0 .. f_o^T, each n_3 x c
    predictions: list  # P_o^1 .. P_o^T at scale-3 resolution (1 x h3 x w3)


def build_memory(rgb, depth):
    """Concatenate [rgb f3e, f4e, f5e, depth f3e, f4e, f5e] with encodings."""
    if rgb.c != depth.c:
        raise ShapeError(f"build_memory: channel mismatch {rgb.c} vs {depth.c}")
    segments = []
    pieces, pos_pieces = [], []
    offset = 0
    for enh in (rgb, depth):
        encs = scale_encodings(enh.dims, enh.c)
        for scale, (tok, pe) in enumerate(zip(enh.scales(), encs), start=3):
            n = tok.data.shape[-2]
            segments.append((f"{enh.modality}.f{scale}e", offset, offset + n))
            pieces.append(tok)
            pos_pieces.append(pe)
            offset += n
    return FusionMemory(T.concat(pieces, axis=-2), T.concat(pos_pieces), segments)


def tf_block(f_prev, mem, pos_query, params):
    """One fusion block: decoder with x=f_prev and y=the full memory."""
    return td_block(f_prev, mem.tokens, pos_query, mem.pos, params)


def fuse(f_init, mem, blocks, classifier, dims3):
    """Run T sequential fusion blocks, predicting after each with the shared
    classifier; T=0 degenerates to no predictions."""
    h3, w3 = dims3
    pos3 = sine_positional_encoding(h3, w3, f_init.data.shape[-1])
    features = [f_init]
    predictions = []
    for params in blocks:
        f = tf_block(features[-1], mem, pos3, params)
        features.append(f)
        predictions.append(predict_map(f, h3, w3, *classifier))
    return FusionState(features, predictions)


def final_loss(predictions_fullres, gt_fullres):
    """L over the deep-supervision stack: sum of per-map mean BCE."""
    if not predictions_fullres:
        warnings.warn("final_loss: empty prediction list (T=0), returning 0")
        return Tensor(0.0)
    loss = T.bce_mean(predictions_fullres[0], gt_fullres)
    for p in predictions_fullres[1:]:
        loss = T.add(loss, T.bce_mean(p, gt_fullres))
    return loss
