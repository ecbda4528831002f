"""Within-modality cross-scale enhancement and the simple initial fusion.

Each scale's token matrix is enhanced by one transformer decoder block whose
memory is the concatenation of the other two scales of the same modality
(progressively: coarser scales contribute their already-enhanced version).
The enhanced pyramid is then collapsed to scale-3 resolution by bilinear
upsampling and addition, and the two modalities are summed into f_init.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .decoder import sine_positional_encoding, td_block
from .errors import ShapeError
from .tensor import Tensor


def map_to_tokens(x):
    """[...] x c x h x w feature map -> [...] x (h*w) x c tokens, position-major."""
    *lead, c, h, w = x.data.shape
    return T.swap_last2(T.reshape(x, tuple(lead) + (c, h * w)))


def tokens_to_map(x, h, w):
    *lead, n, c = x.data.shape
    if n != h * w:
        raise ShapeError(f"tokens_to_map: {n} tokens cannot form a {h}x{w} map")
    return T.reshape(T.swap_last2(x), tuple(lead) + (c, h, w))


@dataclass
class FeaturePyramid:
    modality: str
    c: int
    dims: tuple  # ((h3,w3), (h4,w4), (h5,w5))
    f3: Tensor  # n3 x c
    f4: Tensor  # n4 x c
    f5: Tensor  # n5 x c

    def scales(self):
        return (self.f3, self.f4, self.f5)


@dataclass
class EnhancedPyramid:
    modality: str
    c: int
    dims: tuple
    f3e: Tensor
    f4e: Tensor
    f5e: Tensor

    def scales(self):
        return (self.f3e, self.f4e, self.f5e)


def scale_encodings(dims, c):
    return tuple(sine_positional_encoding(h, w, c) for h, w in dims)


def project(raw_maps, projections, modality, c):
    """1x1-conv each raw backbone map to c channels and flatten to tokens."""
    if len(raw_maps) != 3 or len(projections) != 3:
        raise ShapeError("project expects three raw maps and three projections")
    dims = tuple(m.data.shape[-2:] for m in raw_maps)
    toks = [
        map_to_tokens(T.conv2d(m, w, b, stride=1, pad=0))
        for m, (w, b) in zip(raw_maps, projections)
    ]
    return FeaturePyramid(modality, c, dims, *toks)


def te_block(f_target, f_else, pos_target, pos_else, params):
    """One decoder-block application: enhance f_target from f_else."""
    return td_block(f_target, f_else, pos_target, pos_else, params)


def enhance_modality(pyr, te_params, progressive=True):
    """Enhance all three scales, coarse to fine.

    te_params is (params_scale3, params_scale4, params_scale5).  With
    progressive=False the memories use the raw (not enhanced) coarser scales,
    matching the ablation wiring.
    """
    pos3, pos4, pos5 = scale_encodings(pyr.dims, pyr.c)
    p3, p4, p5 = te_params

    f5e = te_block(
        pyr.f5, T.concat([pyr.f3, pyr.f4], axis=-2), pos5, T.concat([pos3, pos4]), p5
    )
    c5 = f5e if progressive else pyr.f5
    f4e = te_block(
        pyr.f4, T.concat([pyr.f3, c5], axis=-2), pos4, T.concat([pos3, pos5]), p4
    )
    c4 = f4e if progressive else pyr.f4
    f3e = te_block(
        pyr.f3, T.concat([c4, c5], axis=-2), pos3, T.concat([pos4, pos5]), p3
    )
    return EnhancedPyramid(pyr.modality, pyr.c, pyr.dims, f3e, f4e, f5e)


def enhance_identity(pyr):
    """Pass-through used by the simple-fusion baseline (f_ie = f_i)."""
    return EnhancedPyramid(pyr.modality, pyr.c, pyr.dims, pyr.f3, pyr.f4, pyr.f5)


def _multiscale_sum(enh):
    (h3, w3), (h4, w4), (h5, w5) = enh.dims
    up4e = map_to_tokens(T.bilinear_upsample(tokens_to_map(enh.f4e, h4, w4), 2))
    up5e = map_to_tokens(T.bilinear_upsample(tokens_to_map(enh.f5e, h5, w5), 4))
    return T.add(T.add(enh.f3e, up4e), up5e)


def initial_fusion(rgb, depth):
    """f_init = (f3e + up2(f4e) + up4(f5e)) summed over both modalities."""
    if rgb.dims != depth.dims or rgb.c != depth.c:
        raise ShapeError(
            f"initial_fusion: pyramid mismatch rgb {rgb.dims} vs depth {depth.dims}"
        )
    return T.add(_multiscale_sum(rgb), _multiscale_sum(depth))


def predict_map(tokens, h, w, conv_w, conv_b):
    """1x1-conv classifier + sigmoid on a token matrix, as a 1 x h x w map."""
    return T.sigmoid(T.conv2d(tokens_to_map(tokens, h, w), conv_w, conv_b))


def initial_prediction(f_init, dims3, classifier, gt_fullres=None):
    """P_init at scale-3 resolution; optionally its BCE loss against full-res gt.

    The prediction is upsampled x4 to input resolution before the loss so all
    supervision terms are comparable.
    """
    h3, w3 = dims3
    p_small = predict_map(f_init, h3, w3, *classifier)
    lead = tuple(f_init.data.shape[:-2])
    p_full = T.reshape(T.bilinear_upsample(p_small, 4), lead + (4 * h3, 4 * w3))
    if gt_fullres is None:
        return p_small, p_full, None
    return p_small, p_full, T.bce_mean(p_full, gt_fullres)
