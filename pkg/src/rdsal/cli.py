"""Command-line interface.

Exit codes: 0 success, 1 usage/config error, 2 numeric failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import bench as B
from . import harness
from .config import PROFILES, RunConfig, apply_profile, parse_config_file
from .data import generate_dataset
from .errors import (
    CheckpointError,
    ConfigError,
    ImageIOError,
    NumericError,
    ShapeError,
    UsageError,
)
from .gradcheck import run_all
from .model import load_checkpoint
from .netpbm import read_pgm, read_ppm, write_pgm
from .tensor import Tensor


def _add_common(p):
    p.add_argument("--config", metavar="PATH", help="flat key=value config file")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--seed", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--input-size", type=int, dest="input_size")
    p.add_argument("--iters", type=int)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--non-progressive", action="store_true")
    p.add_argument("--baseline-msmmf", action="store_true")


def _build_config(args):
    cfg = RunConfig()
    if args.config:
        cfg = parse_config_file(args.config, cfg)
    if getattr(args, "profile", None):
        apply_profile(cfg, args.profile)
    for key in ("seed", "t", "channels", "input_size", "iters", "out_dir", "data_dir"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    if getattr(args, "non_progressive", False):
        cfg.progressive = False
    if getattr(args, "baseline_msmmf", False):
        cfg.baseline_msmmf = True
    return cfg.validate()


def cmd_gen_data(args):
    cfg = _build_config(args)
    out = args.dir or os.path.join(cfg.out_dir, "data", "train")
    generate_dataset(args.n or cfg.train_size, cfg.input_size, cfg.seed, out)
    print(f"wrote {args.n or cfg.train_size} samples to {out}")
    return 0


def cmd_train(args):
    cfg = _build_config(args)
    _, rows, ckpt = harness.train(cfg)
    print(f"final loss {rows[-1][3]:.4f}; checkpoint at {ckpt}" if rows else f"checkpoint at {ckpt}")
    return 0


def cmd_eval(args):
    cfg = _build_config(args)
    dump = os.path.join(cfg.out_dir, "maps") if args.dump_maps else None
    report = harness.evaluate(cfg, args.checkpoint, data_dir=cfg.data_dir or None, dump_dir=dump)
    print(report.to_text())
    csv_path = os.path.join(cfg.out_dir, "metrics.csv")
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    return 0


def cmd_infer(args):
    cfg = _build_config(args)
    params = load_checkpoint(args.checkpoint)
    rgb = read_ppm(args.rgb)
    depth = read_pgm(args.depth)[None]
    from .model import model_forward

    out = model_forward(Tensor(rgb), Tensor(depth), params)
    write_pgm(args.out_map, out.final_map.data)
    print(f"wrote {args.out_map}")
    return 0


def cmd_ablate(args):
    cfg = _build_config(args)
    report = harness.ablate(cfg)
    print(report.to_text())
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "ablation.csv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    return 0


def cmd_gradcheck(args):
    results = run_all(budget=args.budget)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} units passed")
    return 0 if not failed else 2


def cmd_bench_attn(args):
    rows = B.bench_attention(c=args.c, sizes=tuple(args.sizes), repeats=args.repeats)
    csv = B.bench_csv(rows)
    sys.stdout.write(csv)
    if args.out_csv:
        with open(args.out_csv, "w", encoding="utf-8") as fh:
            fh.write(csv)
    ea_f, dpa_f = B.growth_factors(rows)
    print(f"# ea growth per doubling: {[f'{f:.2f}' for f in ea_f]}")
    print(f"# dpa growth per doubling: {[f'{f:.2f}' for f in dpa_f]}")
    return 0


def make_parser():
    ap = argparse.ArgumentParser(prog="rdsal", description="Transformer RGB-D saliency fusion")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic RGB-D dataset")
    _add_common(p)
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--dir", help="output directory")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("--dump-maps", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="run one RGB-D pair through a checkpoint")
    _add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("rgb")
    p.add_argument("depth")
    p.add_argument("out_map")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("ablate", help="run the ablation grid")
    _add_common(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _add_common(p)
    p.add_argument("--budget", type=int, default=200)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench-attn", help="attention scaling benchmark")
    p.add_argument("--c", type=int, default=32)
    p.add_argument("--sizes", type=int, nargs="+", default=[1024, 2048, 4096])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out-csv")
    p.set_defaults(fn=cmd_bench_attn)
    return ap


def main(argv=None):
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
        return args.fn(args)
    except (ConfigError, UsageError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, ImageIOError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
