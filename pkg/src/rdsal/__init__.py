"""Transformer-based RGB-D salient object detection, desk scale.

Layers: a minimal autodiff tensor core; efficient attention and transformer
decoder blocks; within-modality cross-scale enhancement; global multi-scale
multi-modal fusion with deep supervision; saliency metrics; and a synthetic
RGB-D training harness with a CLI.
"""

from .tensor import Tensor, backward, default_dtype, set_default_dtype

__all__ = ["Tensor", "backward", "default_dtype", "set_default_dtype"]
__version__ = "0.1.0"
