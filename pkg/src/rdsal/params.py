"""Named parameter registry and initializers.

Every trainable tensor lives in one flat dict keyed by a dotted name
(e.g. "rgb.te5.sa.wq"); the structured blocks hold references to the same
Tensor objects, so the optimizer and checkpoint code only ever see the
registry.
"""

from __future__ import annotations

import numpy as np

from .attention import MultiHeadParams
from .decoder import DecoderBlockParams
from .errors import ConfigError
from .tensor import Tensor, get_default_dtype


class Registry:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)
        self.tensors: dict[str, Tensor] = {}

    def _add(self, name, array):
        if name in self.tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(array, dtype=get_default_dtype()), requires_grad=True, name=name)
        self.tensors[name] = t
        return t

    def he_uniform(self, name, shape, fan_in):
        limit = np.sqrt(6.0 / fan_in)
        return self._add(name, self.rng.uniform(-limit, limit, size=shape))

    def zeros(self, name, shape):
        return self._add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self._add(name, np.ones(shape))

    def linear(self, prefix, cin, cout):
        w = self.he_uniform(f"{prefix}.w", (cin, cout), cin)
        b = self.zeros(f"{prefix}.b", (cout,))
        return w, b

    def conv(self, prefix, cout, cin, k):
        w = self.he_uniform(f"{prefix}.w", (cout, cin, k, k), cin * k * k)
        b = self.zeros(f"{prefix}.b", (cout,))
        return w, b

    def multi_head(self, prefix, c, heads):
        wq, bq = self.linear(f"{prefix}.q", c, c)
        wk, bk = self.linear(f"{prefix}.k", c, c)
        wv, bv = self.linear(f"{prefix}.v", c, c)
        wo, bo = self.linear(f"{prefix}.o", c, c)
        return MultiHeadParams(heads, wq, bq, wk, bk, wv, bv, wo, bo)

    def decoder_block(self, prefix, c, heads, d_ff=None):
        d_ff = 2 * c if d_ff is None else d_ff
        sa = self.multi_head(f"{prefix}.sa", c, heads)
        ca = self.multi_head(f"{prefix}.ca", c, heads)
        w1, b1 = self.linear(f"{prefix}.ffn1", c, d_ff)
        w2, b2 = self.linear(f"{prefix}.ffn2", d_ff, c)
        return DecoderBlockParams(
            sa,
            ca,
            w1,
            b1,
            w2,
            b2,
            self.ones(f"{prefix}.ln1.g", (c,)),
            self.zeros(f"{prefix}.ln1.b", (c,)),
            self.ones(f"{prefix}.ln2.g", (c,)),
            self.zeros(f"{prefix}.ln2.b", (c,)),
            self.ones(f"{prefix}.ln3.g", (c,)),
            self.zeros(f"{prefix}.ln3.b", (c,)),
        )
