"""Benchmarking, batch evaluation, FLOPs sweeps, and pruning overlays.

Everything here is importable and CLI-free; ``cli.py`` only parses flags
and delegates. Benchmark and evaluation can fan out over a thread pool;
results are reduced in a fixed order so they are independent of the worker
count.
"""

from __future__ import annotations

import io
import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .flops import model_macs
from .images import ImageError, ImageRGB, from_array, load_image
from .model import FUSION_ORIGIN, ModelConfig, ModelWeights, StageRecord, forward

CSV_COLUMNS = ("indicator", "keep_rate", "fusion", "overlap", "gflops",
               "images_per_sec", "top1")


@dataclass(frozen=True)
class SweepRow:
    """One configuration's worth of results, CSV-serializable."""

    indicator: str
    keep_rate: float
    fusion: bool
    overlap: bool
    gflops: float
    images_per_sec: float | None = None
    top1: float | None = None


@dataclass(frozen=True)
class BenchResult:
    config: ModelConfig
    warmup_iters: int
    measured_iters: int
    images_per_second: float
    latencies_ms: tuple[float, ...]
    total_macs: int


@dataclass(frozen=True)
class EvalResult:
    config: ModelConfig
    total: int
    correct: int
    skipped: int
    accuracy: float


def _flag(value: bool) -> str:
    return "on" if value else "off"


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def sweep_rows_to_csv(rows: list[SweepRow]) -> str:
    """Serialize rows with full float precision so the CSV round-trips."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([
            r.indicator,
            repr(float(r.keep_rate)),
            _flag(r.fusion),
            _flag(r.overlap),
            repr(float(r.gflops)),
            _fmt(r.images_per_sec),
            _fmt(r.top1),
        ])
    return buf.getvalue()


def sweep_rows_from_csv(text: str) -> list[SweepRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    rows = []
    for rec in reader:
        rows.append(SweepRow(
            indicator=rec[0],
            keep_rate=float(rec[1]),
            fusion=rec[2] == "on",
            overlap=rec[3] == "on",
            gflops=float(rec[4]),
            images_per_sec=float(rec[5]) if rec[5] else None,
            top1=float(rec[6]) if rec[6] else None,
        ))
    return rows


def config_sweep_row(cfg: ModelConfig, images_per_sec=None, top1=None) -> SweepRow:
    report = model_macs(cfg)
    return SweepRow(
        indicator=cfg.indicator,
        keep_rate=cfg.keep_rate,
        fusion=cfg.fusion_enabled,
        overlap=cfg.stride < cfg.patch_size,
        gflops=report.total_gflops,
        images_per_sec=images_per_sec,
        top1=top1,
    )


def flops_sweep(cfg: ModelConfig, keep_rates: list[float]) -> list[SweepRow]:
    """One row per keep rate, same shape and flags otherwise."""
    return [config_sweep_row(replace(cfg, keep_rate=r)) for r in keep_rates]


def random_input_image(cfg: ModelConfig, seed: int) -> ImageRGB:
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(cfg.image_size, cfg.image_size, 3), dtype=np.uint8)
    return from_array(arr)


def run_benchmark(
    weights: ModelWeights,
    cfg: ModelConfig,
    iters: int = 200,
    warmup: int = 50,
    batch: int = 1,
    seed: int = 0,
    threads: int = 1,
) -> BenchResult:
    """Time repeated forward passes over a fixed random input batch.

    Each measured iteration pushes ``batch`` images through the model
    (concurrently when ``threads > 1``) and records its wall-clock latency.
    """
    if iters < 1:
        raise ValueError("need at least one measured iteration")
    if warmup < 0 or batch < 1 or threads < 1:
        raise ValueError("warmup must be >= 0 and batch/threads >= 1")
    images = [random_input_image(cfg, seed + i) for i in range(batch)]

    def one_iteration():
        if threads == 1 or batch == 1:
            for img in images:
                forward(img, weights, cfg)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(lambda img: forward(img, weights, cfg), images))

    for _ in range(warmup):
        one_iteration()
    latencies = []
    t_total0 = time.perf_counter()
    for _ in range(iters):
        t0 = time.perf_counter()
        one_iteration()
        latencies.append((time.perf_counter() - t0) * 1000.0)
    elapsed = time.perf_counter() - t_total0
    return BenchResult(
        config=cfg,
        warmup_iters=warmup,
        measured_iters=iters,
        images_per_second=iters * batch / elapsed,
        latencies_ms=tuple(latencies),
        total_macs=model_macs(cfg).total_macs,
    )


def discover_labeled_images(directory: str | os.PathLike) -> list[tuple[str, int]]:
    """(path, class index) pairs from class-named subdirectories.

    Subdirectory names that parse as integers are used directly as class
    indices; otherwise classes are numbered by sorted name.
    """
    subdirs = sorted(
        d for d in os.listdir(directory) if os.path.isdir(os.path.join(directory, d))
    )
    if not subdirs:
        raise ValueError(f"no class subdirectories under {directory}")
    try:
        labels = {d: int(d) for d in subdirs}
    except ValueError:
        labels = {d: i for i, d in enumerate(subdirs)}
    pairs = []
    for d in subdirs:
        for name in sorted(os.listdir(os.path.join(directory, d))):
            path = os.path.join(directory, d, name)
            if os.path.isfile(path):
                pairs.append((path, labels[d]))
    if not pairs:
        raise ValueError(f"no image files under {directory}")
    return pairs


def run_eval(
    weights: ModelWeights,
    cfg: ModelConfig,
    directory: str | os.PathLike,
    threads: int = 1,
    warn=lambda msg: None,
) -> EvalResult:
    """Top-1 accuracy over a labeled directory; unreadable images are skipped."""
    pairs = discover_labeled_images(directory)

    def classify(pair):
        path, label = pair
        try:
            image = load_image(path, cfg.image_size)
        except (ImageError, OSError) as exc:
            return path, None, f"skipping {path}: {exc}"
        logits, _ = forward(image, weights, cfg)
        return path, (int(np.argmax(logits)) == label), None

    if threads == 1:
        outcomes = [classify(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(classify, pairs))
    # keyed by path and reduced in sorted order: worker count cannot matter
    outcomes.sort(key=lambda rec: rec[0])
    correct = skipped = scored = 0
    for _path, ok, warning in outcomes:
        if warning is not None:
            warn(warning)
            skipped += 1
            continue
        scored += 1
        correct += int(ok)
    if scored == 0:
        raise ValueError("no readable images to evaluate")
    return EvalResult(
        config=cfg,
        total=scored,
        correct=correct,
        skipped=skipped,
        accuracy=correct / scored,
    )


def stage_overlays(
    image: ImageRGB, records: list[StageRecord], cfg: ModelConfig
) -> list[ImageRGB]:
    """One overlay per pruning stage: surviving patches keep their pixels,
    every other grid cell is darkened to 25% brightness.

    Requires non-overlapping patches (stride == patch_size); overlapped
    grids have no disjoint pixel footprint to paint.
    """
    if cfg.stride != cfg.patch_size:
        raise ValueError(
            "visualization requires non-overlapping patches "
            f"(stride {cfg.stride} != patch_size {cfg.patch_size})"
        )
    base = image.to_array()
    side, p = cfg.grid_side, cfg.patch_size
    overlays = []
    for record in records:
        kept_cells = {o for o in record.kept_origins if o != FUSION_ORIGIN}
        arr = base.copy()
        for gy in range(side):
            for gx in range(side):
                if (gy, gx) not in kept_cells:
                    cell = arr[gy * p : (gy + 1) * p, gx * p : (gx + 1) * p, :]
                    cell //= 4
        overlays.append(from_array(arr))
    return overlays
