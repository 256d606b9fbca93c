"""Command-line surface: classify, flops, bench, eval, visualize.

Every command echoes the fully resolved configuration before results, so a
run can be reproduced from its own output. Exit status: 0 success,
1 computation error, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import harness
from .flops import format_report, model_macs
from .images import ImageError, load_image, write_ppm
from .kernels import softmax_rows
from .model import ConfigError, ModelConfig, forward, stage_kept_counts
from .model_io import WeightsError, load_weights, random_weights, save_weights
from .pruning import INDICATOR_KINDS

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_USAGE = 2


def _add_pruning_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--keep-rate", type=float, default=None, help="fraction of patches kept per stage")
    p.add_argument("--indicator", choices=INDICATOR_KINDS, default=None)
    p.add_argument("--fusion", choices=("on", "off"), default=None)
    p.add_argument("--temperature", type=float, default=None, help="fusion softmax temperature")
    p.add_argument("--overlap", choices=("on", "off"), default=None,
                   help="overlapping patches (stride = 3/4 patch size)")
    p.add_argument("--prune-blocks", default=None, help="comma list of 1-indexed block positions")
    p.add_argument("--seed", type=int, default=0)


def _add_shape_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--patch-size", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--mlp-ratio", type=float, default=None)
    p.add_argument("--num-classes", type=int, default=None)


def _apply_flags(cfg: ModelConfig, args: argparse.Namespace) -> ModelConfig:
    """Override config fields with any explicitly supplied flags."""
    updates = {}
    mapping = {
        "keep_rate": "keep_rate",
        "indicator": "indicator",
        "temperature": "temperature",
        "image_size": "image_size",
        "patch_size": "patch_size",
        "embed_dim": "embed_dim",
        "heads": "heads",
        "depth": "depth",
        "mlp_ratio": "mlp_ratio",
        "num_classes": "num_classes",
    }
    for attr, field in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            updates[field] = value
    if getattr(args, "fusion", None) is not None:
        updates["fusion_enabled"] = args.fusion == "on"
    if getattr(args, "prune_blocks", None) is not None:
        try:
            updates["prune_block_indices"] = tuple(
                int(v) for v in args.prune_blocks.split(",") if v.strip()
            )
        except ValueError:
            raise ConfigError(f"bad --prune-blocks value {args.prune_blocks!r}") from None
    cfg = replace(cfg, **updates)
    if getattr(args, "overlap", None) is not None:
        stride = cfg.patch_size * 3 // 4 if args.overlap == "on" else cfg.patch_size
        cfg = replace(cfg, stride=stride)
    if getattr(args, "embed_dim", None) is not None and "qkv_dim" not in updates:
        cfg = replace(cfg, qkv_dim=cfg.embed_dim)
    return cfg


def _echo_config(cfg: ModelConfig) -> None:
    print("config:", json.dumps(asdict(cfg), sort_keys=True))


def _load_model(args) -> tuple[ModelConfig, object]:
    cfg, weights = load_weights(args.model)
    return _apply_flags(cfg, args), weights


def cmd_classify(args) -> int:
    cfg, weights = _load_model(args)
    image = load_image(args.image, cfg.image_size)
    _echo_config(cfg)
    logits, records = forward(image, weights, cfg)
    probs = softmax_rows(logits[None, :])[0]
    top = np.argsort(-probs, kind="stable")[: min(5, len(probs))]
    kept = [len([o for o in r.kept_origins]) for r in records]
    print("stage kept counts:", "/".join(str(k) for k in kept) if kept else "(no pruning)")
    for rank, idx in enumerate(top, start=1):
        print(f"top{rank}: class {int(idx)} score {probs[idx]:.6f}")
    return EXIT_OK


def cmd_flops(args) -> int:
    if args.model:
        cfg, _ = load_weights(args.model)
        cfg = _apply_flags(cfg, args)
    else:
        cfg = _apply_flags(ModelConfig(), args)
    _echo_config(cfg)
    if args.sweep:
        rates = [float(v) for v in args.sweep.split(",") if v.strip()]
        rows = harness.flops_sweep(cfg, rates)
        text = harness.sweep_rows_to_csv(rows)
        if args.csv:
            with open(args.csv, "w", newline="") as f:
                f.write(text)
            print(f"wrote {len(rows)} rows to {args.csv}")
        for row in rows:
            print(f"r={row.keep_rate:g}: {row.gflops:.2f} GFLOPs")
    else:
        report = model_macs(cfg)
        print(format_report(report))
        if args.csv:
            with open(args.csv, "w", newline="") as f:
                f.write(harness.sweep_rows_to_csv([harness.config_sweep_row(cfg)]))
            print(f"wrote 1 row to {args.csv}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg, weights = _load_model(args)
    _echo_config(cfg)
    result = harness.run_benchmark(
        weights, cfg,
        iters=args.iters, warmup=args.warmup,
        batch=args.batch, seed=args.seed, threads=args.threads,
    )
    lat = np.array(result.latencies_ms)
    print(f"total MACs per image: {result.total_macs:,} "
          f"({result.total_macs / 1e9:.2f} GFLOPs)")
    print(f"warmup {result.warmup_iters}, measured {result.measured_iters}, "
          f"batch {args.batch}, threads {args.threads}")
    print(f"latency ms: mean {lat.mean():.2f} p50 {np.percentile(lat, 50):.2f} "
          f"p95 {np.percentile(lat, 95):.2f}")
    print(f"images/s: {result.images_per_second:.2f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, weights = _load_model(args)
    _echo_config(cfg)
    result = harness.run_eval(
        weights, cfg, args.dir, threads=args.threads,
        warn=lambda msg: print(f"warning: {msg}", file=sys.stderr),
    )
    row = harness.config_sweep_row(cfg, top1=result.accuracy)
    print(f"evaluated {result.total} images, skipped {result.skipped}")
    print(f"top-1 accuracy: {result.accuracy:.4f}")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            f.write(harness.sweep_rows_to_csv([row]))
        print(f"wrote 1 row to {args.csv}")
    return EXIT_OK


def cmd_visualize(args) -> int:
    cfg, weights = _load_model(args)
    if cfg.stride != cfg.patch_size:
        print("error: visualization needs non-overlapping patches; "
              "overlapping windows share pixels so no disjoint cells exist",
              file=sys.stderr)
        return EXIT_USAGE
    image = load_image(args.image, cfg.image_size)
    _echo_config(cfg)
    logits, records = forward(image, weights, cfg)
    overlays = harness.stage_overlays(image, records, cfg)
    os.makedirs(args.out, exist_ok=True)
    for record, overlay in zip(records, overlays):
        path = os.path.join(args.out, f"stage_block{record.block_index}.ppm")
        write_ppm(path, overlay)
        print(f"wrote {path} ({len(record.kept_origins)} patches kept)")
    if not overlays:
        print("no pruning stages ran; nothing to draw")
    return EXIT_OK


def cmd_make_random_weights(args) -> int:
    cfg = _apply_flags(ModelConfig(), args)
    _echo_config(cfg)
    save_weights(args.out, cfg, random_weights(cfg, args.seed))
    print(f"wrote random weights to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitprune",
        description="Vision Transformer inference with staged attention-diversity patch pruning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="classify one image, printing top-5 classes")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    _add_pruning_flags(p)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("flops", help="analytic GFLOPs for a configuration or sweep")
    p.add_argument("--model", default=None, help="optional weights file supplying the config")
    p.add_argument("--sweep", default=None, help="comma list of keep rates")
    p.add_argument("--csv", default=None, help="write rows to this CSV file")
    _add_pruning_flags(p)
    _add_shape_flags(p)
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("bench", help="throughput benchmark on fixed random inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--warmup", type=int, default=50)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    _add_pruning_flags(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("eval", help="top-1 accuracy over a labeled directory")
    p.add_argument("--model", required=True)
    p.add_argument("--dir", required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--csv", default=None)
    _add_pruning_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("visualize", help="write per-stage pruning overlays as PPM")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    _add_pruning_flags(p)
    p.set_defaults(fn=cmd_visualize)

    p = sub.add_parser("make-random-weights", help="write a seeded random weights file")
    p.add_argument("--out", required=True)
    _add_pruning_flags(p)
    _add_shape_flags(p)
    p.set_defaults(fn=cmd_make_random_weights)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (WeightsError, ImageError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
