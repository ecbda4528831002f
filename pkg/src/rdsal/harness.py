"""Training, evaluation, inference and ablation loops."""

from __future__ import annotations

import gc
import os

import numpy as np

from . import metrics as M
from . import tensor as T
from .data import generate_dataset, load_dataset
from .errors import NumericError
from .model import (
    ModelConfig,
    build_model,
    load_checkpoint,
    model_forward,
    save_checkpoint,
)
from .netpbm import write_pgm
from .optim import Adam
from .tensor import Tensor

LOSS_LOG_HEADER = "iter,l_init,l_final,total"


def model_config_from_run(cfg):
    return ModelConfig(
        c=cfg.channels,
        t=cfg.t,
        heads=cfg.heads,
        input_size=cfg.input_size,
        progressive=cfg.progressive,
        baseline_msmmf=cfg.baseline_msmmf,
        seed=cfg.seed,
    )


def ensure_dataset(cfg, split="train"):
    """Generate the split deterministically if its directory is absent."""
    base = cfg.data_dir or os.path.join(cfg.out_dir, "data")
    directory = os.path.join(base, split)
    n = cfg.train_size if split == "train" else cfg.test_size
    # test split gets a disjoint seed stream
    seed = cfg.seed if split == "train" else cfg.seed + 10_000
    if not os.path.isdir(directory) or not os.listdir(directory):
        generate_dataset(n, cfg.input_size, seed, directory)
    return directory


def _check_finite(name, value):
    if not np.isfinite(value):
        raise NumericError(f"non-finite {name} ({value}); aborting")


def train(cfg, log=print):
    """Train from scratch; returns (params, loss_rows, checkpoint_path)."""
    cfg.validate()
    os.makedirs(cfg.out_dir, exist_ok=True)
    samples = load_dataset(ensure_dataset(cfg, "train"))
    params = build_model(model_config_from_run(cfg))
    opt = Adam(params.tensors, lr=cfg.lr)
    order_rng = np.random.default_rng(cfg.seed + 1)
    queue = []
    rows = []
    log_path = os.path.join(cfg.out_dir, "loss_log.csv")
    ckpt_path = os.path.join(cfg.out_dir, "model.ckpt")

    # the graph holds no reference cycles, so cyclic GC only adds overhead;
    # collect manually at a coarse interval instead
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        with open(log_path, "w", encoding="utf-8") as fh:
            fh.write(LOSS_LOG_HEADER + "\n")
            for it in range(cfg.iters):
                if len(queue) < cfg.batch:
                    queue.extend(order_rng.permutation(len(samples)).tolist())
                batch = [queue.pop(0) for _ in range(cfg.batch)]
                opt.zero_grad()
                # one stacked forward/backward; bce means over batch x pixels,
                # so loss and grads equal the average over per-sample passes
                rgb = Tensor(np.stack([samples[si].rgb for si in batch]))
                depth = Tensor(np.stack([samples[si].depth for si in batch]))
                gt = Tensor(np.stack([samples[si].gt for si in batch]))
                out = model_forward(rgb, depth, params, gt)
                li, lf = out.l_init.item(), out.l_final.item()
                T.backward(out.total_loss)
                _check_finite("loss", li + lf)
                for t in params.tensors.values():
                    if t.grad is not None and not np.isfinite(t.grad).all():
                        raise NumericError(f"non-finite gradient in {t.name}; aborting")
                opt.step()
                rows.append((it, li, lf, li + lf))
                fh.write(f"{it},{li:.6f},{lf:.6f},{li + lf:.6f}\n")
                if it % 50 == 0 or it == cfg.iters - 1:
                    log(f"iter {it}: l_init={li:.4f} l_final={lf:.4f} total={li + lf:.4f}")
                if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                    save_checkpoint(
                        params, os.path.join(cfg.out_dir, f"model_iter{it + 1:06d}.ckpt")
                    )
                if it % 100 == 99:
                    gc.collect()
    finally:
        if gc_was_enabled:
            gc.enable()
    save_checkpoint(params, ckpt_path)
    return params, rows, ckpt_path


def predict(params, sample):
    """Final saliency map (P_o^T, or P_init when there are no fusion blocks)."""
    out = model_forward(Tensor(sample.rgb), Tensor(sample.depth), params)
    return out.final_map.data


def evaluate(cfg, checkpoint, data_dir=None, label=None, dump_dir=None):
    cfg.validate()
    params = (
        checkpoint
        if not isinstance(checkpoint, (str, os.PathLike))
        else load_checkpoint(checkpoint)
    )
    directory = data_dir or ensure_dataset(cfg, "test")
    samples = load_dataset(directory)
    pairs = []
    for s in samples:
        pred = predict(params, s)
        pairs.append((pred, s.gt))
        if dump_dir:
            os.makedirs(dump_dir, exist_ok=True)
            write_pgm(os.path.join(dump_dir, f"map_{s.index:04d}.pgm"), pred)
    return M.evaluate_dataset(pairs, label or os.path.basename(directory))


ABLATION_GRID = [(t, prog) for t in (0, 2, 4, 5) for prog in (True, False)]


def ablate(cfg, log=print):
    """Train/eval every ablation variant; returns a MetricReport."""
    import copy

    cfg.validate()
    test_dir = ensure_dataset(cfg, "test")
    rows = []
    variants = [
        (f"T={t}{'' if prog else ',nonprog'}", dict(t=t, progressive=prog, baseline_msmmf=False))
        for t, prog in ABLATION_GRID
    ] + [("msmmf-baseline", dict(baseline_msmmf=True))]
    for label, overrides in variants:
        vcfg = copy.deepcopy(cfg)
        for k, v in overrides.items():
            setattr(vcfg, k, v)
        vcfg.out_dir = os.path.join(cfg.out_dir, f"ablate_{label.replace(',', '_').replace('=', '')}")
        vcfg.checkpoint_every = 0
        log(f"[ablate] training variant {label}")
        params, _, _ = train(vcfg, log=lambda *_: None)
        report = evaluate(vcfg, params, data_dir=test_dir, label=label)
        rows.extend(report.rows)
        log(report.to_text().splitlines()[-1])
    return M.MetricReport(rows)
