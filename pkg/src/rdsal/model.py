"""Two-stream desk-scale model: backbone, end-to-end forward, checkpoints.

The backbone is a small from-scratch three-stage conv net with the usual
stride-4/8/16 pyramid (stand-in for a pretrained classification trunk);
everything downstream (projection, TWFEM, TFFM) follows the fusion design.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from . import tffm, twfem
from .errors import CheckpointError, ConfigError, ShapeError
from .params import Registry
from .tensor import Tensor, get_default_dtype

BACKBONE_WIDTHS = (32, 64, 128)
CHECKPOINT_MAGIC = b"TFRD"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    c: int = 128
    t: int = 4
    heads: int = 4
    input_size: int = 256
    progressive: bool = True
    baseline_msmmf: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.input_size % 16:
            raise ConfigError(f"input size must be divisible by 16, got {self.input_size}")
        if self.c % (2 * self.heads) or self.c % 4:
            raise ConfigError(f"c={self.c} must be divisible by 4 and by 2*heads")
        if self.t < 0:
            raise ConfigError(f"T must be >= 0, got {self.t}")

    @property
    def dims(self):
        s = self.input_size
        return ((s // 4, s // 4), (s // 8, s // 8), (s // 16, s // 16))


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict  # flat name -> Tensor registry
    backbones: dict  # modality -> list of stage conv (w, b) pairs
    projections: dict  # modality -> [(w, b)] x3
    te_blocks: dict  # modality -> (block3, block4, block5); empty for baseline
    tf_blocks: list = field(default_factory=list)
    init_classifier: tuple = ()
    fusion_classifier: tuple = ()


def _build_backbone(reg, prefix, cin):
    stages = []
    widths = BACKBONE_WIDTHS
    prev = cin
    for si, width in enumerate(widths, start=1):
        convs = [
            reg.conv(f"{prefix}.stage{si}.conv1", width, prev, 3),
            reg.conv(f"{prefix}.stage{si}.conv2", width, width, 3),
        ]
        stages.append(convs)
        prev = width
    return stages


def build_model(config):
    reg = Registry(config.seed)
    c = config.c
    backbones = {
        "rgb": _build_backbone(reg, "rgb.backbone", 3),
        "depth": _build_backbone(reg, "depth.backbone", 1),
    }
    projections = {
        m: [reg.conv(f"{m}.proj{i}", c, w, 1) for i, w in zip((3, 4, 5), BACKBONE_WIDTHS)]
        for m in ("rgb", "depth")
    }
    te_blocks = {}
    tf_blocks = []
    fusion_classifier = ()
    if not config.baseline_msmmf:
        te_blocks = {
            m: tuple(reg.decoder_block(f"{m}.te{i}", c, config.heads) for i in (3, 4, 5))
            for m in ("rgb", "depth")
        }
        tf_blocks = [reg.decoder_block(f"tffm.tf{t}", c, config.heads) for t in range(1, config.t + 1)]
        fusion_classifier = reg.conv("tffm.classifier", 1, c, 1)
    init_classifier = reg.conv("init.classifier", 1, c, 1)
    return ModelParams(
        config,
        reg.tensors,
        backbones,
        projections,
        te_blocks,
        tf_blocks,
        init_classifier,
        fusion_classifier,
    )


def backbone_forward(img, stages):
    """Return the three raw maps at strides 4, 8, 16."""
    h, w = img.data.shape[-2:]
    if h % 16 or w % 16:
        raise ConfigError(f"backbone input extents must be divisible by 16, got {h}x{w}")
    x = img
    outs = []
    for si, convs in enumerate(stages):
        for ci, (wgt, b) in enumerate(convs):
            x = T.relu(T.conv2d(x, wgt, b, stride=1, pad=1))
            # stage 1 pools between its convs so the second conv runs at
            # half resolution; the stage still ends at stride 4
            if si == 0 and ci == 0:
                x = T.maxpool2d(x)
        x = T.maxpool2d(x)
        outs.append(x)
    return outs


@dataclass
class ModelOutput:
    p_init: Tensor  # H x W, in (0, 1)
    predictions: list  # [P_o^1 .. P_o^T], each H x W
    l_init: Tensor = None
    l_final: Tensor = None

    @property
    def final_map(self):
        return self.predictions[-1] if self.predictions else self.p_init

    @property
    def total_loss(self):
        return T.add(self.l_init, self.l_final)


def model_forward(rgb, depth, params, gt=None):
    """Full forward pass; computes losses when gt (H x W in {0,1}) is given."""
    cfg = params.config
    if (
        rgb.data.shape[-2:] != depth.data.shape[-2:]
        or rgb.data.shape[:-3] != depth.data.shape[:-3]
    ):
        raise ShapeError(f"rgb {rgb.shape} and depth {depth.shape} extents differ")

    enhanced = {}
    for modality, img in (("rgb", rgb), ("depth", depth)):
        raw = backbone_forward(img, params.backbones[modality])
        pyr = twfem.project(raw, params.projections[modality], modality, cfg.c)
        if cfg.baseline_msmmf:
            enhanced[modality] = twfem.enhance_identity(pyr)
        else:
            enhanced[modality] = twfem.enhance_modality(
                pyr, params.te_blocks[modality], progressive=cfg.progressive
            )

    dims3 = cfg.dims[0]
    f_init = twfem.initial_fusion(enhanced["rgb"], enhanced["depth"])
    _, p_init_full, l_init = twfem.initial_prediction(
        f_init, dims3, params.init_classifier, gt
    )

    preds_full = []
    l_final = None
    if not cfg.baseline_msmmf and cfg.t > 0:
        mem = tffm.build_memory(enhanced["rgb"], enhanced["depth"])
        state = tffm.fuse(f_init, mem, params.tf_blocks, params.fusion_classifier, dims3)
        h3, w3 = dims3
        lead = tuple(rgb.data.shape[:-3])
        preds_full = [
            T.reshape(T.bilinear_upsample(p, 4), lead + (4 * h3, 4 * w3))
            for p in state.predictions
        ]
        if gt is not None:
            l_final = tffm.final_loss(preds_full, gt)
    elif gt is not None:
        l_final = Tensor(0.0)
    return ModelOutput(p_init_full, preds_full, l_init, l_final)


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_checkpoint(params, path):
    cfg = params.config
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(
            struct.pack(
                "<5I", cfg.c, cfg.t, cfg.heads, cfg.input_size, cfg.input_size
            )
        )
        names = sorted(params.tensors)
        fh.write(struct.pack("<Q", len(names)))
        for name in names:
            data = np.ascontiguousarray(params.tensors[name].data, dtype="<f4")
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def read_checkpoint(path):
    """Raw read: (config ints (c, t, heads, h, w), dict name -> ndarray)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        cfg = struct.unpack("<5I", _read_exact(fh, 20, "config block"))
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, "record count"))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            if name in arrays:
                raise CheckpointError(f"{path}: duplicate parameter name {name!r}")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            n = int(np.prod(dims)) if rank else 1
            payload = _read_exact(fh, 4 * n, f"payload of {name}")
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last record")
    return cfg, arrays


def load_checkpoint(path, expect_config=None):
    """Rebuild a full ModelParams from a checkpoint file."""
    (c, t, heads, h, w), arrays = read_checkpoint(path)
    if h != w:
        raise CheckpointError(f"{path}: non-square input size {h}x{w} unsupported")
    if expect_config is not None:
        got = (c, t, heads, h)
        want = (
            expect_config.c,
            expect_config.t,
            expect_config.heads,
            expect_config.input_size,
        )
        if got != want:
            raise CheckpointError(
                f"{path}: config (c,T,heads,size)={got} does not match expected {want}"
            )
    baseline = not any(n.startswith("rgb.te") for n in arrays)
    config = ModelConfig(
        c=c, t=t, heads=heads, input_size=h, baseline_msmmf=baseline
    )
    params = build_model(config)
    if set(params.tensors) != set(arrays):
        missing = sorted(set(params.tensors) - set(arrays))[:3]
        extra = sorted(set(arrays) - set(params.tensors))[:3]
        raise CheckpointError(
            f"{path}: parameter names do not match model (missing {missing}, extra {extra})"
        )
    dt = get_default_dtype()
    for name, arr in arrays.items():
        tensor = params.tensors[name]
        if tuple(tensor.data.shape) != tuple(arr.shape):
            raise CheckpointError(
                f"{path}: shape mismatch for {name}: {arr.shape} vs {tensor.data.shape}"
            )
        tensor.data = arr.astype(dt)
    return params


def set_progressive(params, progressive):
    """Return params with the TWFEM wiring flag replaced (shared tensors)."""
    return replace_config(params, replace(params.config, progressive=progressive))


def replace_config(params, config):
    return ModelParams(
        config,
        params.tensors,
        params.backbones,
        params.projections,
        params.te_blocks,
        params.tf_blocks,
        params.init_classifier,
        params.fusion_classifier,
    )


def parameter_count(config):
    """Analytic parameter count for a given config (see README)."""
    c = config.c
    d_ff = 2 * c
    conv = lambda cout, cin, k: cout * cin * k * k + cout
    backbone = lambda cin: (
        conv(32, cin, 3) + conv(32, 32, 3) + conv(64, 32, 3) + conv(64, 64, 3)
        + conv(128, 64, 3) + conv(128, 128, 3)
    )
    lin = lambda i, o: i * o + o
    mh = 4 * lin(c, c)
    block = 2 * mh + lin(c, d_ff) + lin(d_ff, c) + 6 * c
    total = backbone(3) + backbone(1)
    total += 2 * sum(conv(c, w, 1) for w in BACKBONE_WIDTHS)
    total += conv(1, c, 1)  # init classifier
    if not config.baseline_msmmf:
        total += 6 * block  # TE blocks, 3 per modality
        total += config.t * block
        total += conv(1, c, 1)  # shared fusion classifier
    return total
