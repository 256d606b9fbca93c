"""Deterministic weight container: load, save, and seeded random generation.

File layout: magic ``VPW1``, a little-endian u32 manifest length, a JSON
manifest, then a raw little-endian float32 payload. The manifest carries the
model configuration, the per-channel input normalization statistics, and one
entry per tensor (name, shape, byte offset into the payload, byte length).
Offsets must be non-overlapping and in-bounds, lengths must equal
``4 * prod(shape)``, and the entry names must cover exactly the tensors the
configuration demands; loading validates all of that before touching data.

Patch-projection rows correspond to patch pixels flattened in
(row, col, channel) order; converters from other checkpoint formats must
produce that layout.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .model import BlockWeights, ConfigError, ModelConfig, ModelWeights

MAGIC = b"VPW1"
FORMAT_VERSION = 1

DEFAULT_MEAN = (0.485, 0.456, 0.406)
DEFAULT_STD = (0.229, 0.224, 0.225)


class WeightsError(ValueError):
    """Weight container fails structural or shape validation."""


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    shape: tuple[int, ...]
    offset: int
    length: int


@dataclass(frozen=True)
class WeightsManifest:
    format_version: int
    config: ModelConfig
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    entries: tuple[ManifestEntry, ...]


def tensor_layout(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list; also the payload order used by save."""
    d, dp, hid = cfg.embed_dim, cfg.qkv_dim, cfg.hidden_dim
    layout: list[tuple[str, tuple[int, ...]]] = [
        ("patch_embed.weight", (cfg.patch_dim, d)),
        ("patch_embed.bias", (d,)),
        ("cls_token", (d,)),
        ("pos_embed", (1 + cfg.num_patches, d)),
    ]
    for i in range(cfg.depth):
        b = f"block{i}"
        layout += [
            (f"{b}.ln1.gamma", (d,)),
            (f"{b}.ln1.beta", (d,)),
            (f"{b}.W_Q", (d, dp)),
            (f"{b}.b_Q", (dp,)),
            (f"{b}.W_K", (d, dp)),
            (f"{b}.b_K", (dp,)),
            (f"{b}.W_V", (d, dp)),
            (f"{b}.b_V", (dp,)),
            (f"{b}.W_O", (dp, d)),
            (f"{b}.b_O", (d,)),
            (f"{b}.ln2.gamma", (d,)),
            (f"{b}.ln2.beta", (d,)),
            (f"{b}.mlp.W1", (d, hid)),
            (f"{b}.mlp.b1", (hid,)),
            (f"{b}.mlp.W2", (hid, d)),
            (f"{b}.mlp.b2", (d,)),
        ]
    layout += [
        ("norm.gamma", (d,)),
        ("norm.beta", (d,)),
        ("head.weight", (d, cfg.num_classes)),
        ("head.bias", (cfg.num_classes,)),
    ]
    return layout


def _tensors_from_weights(cfg: ModelConfig, weights: ModelWeights) -> dict[str, np.ndarray]:
    tensors = {
        "patch_embed.weight": weights.patch_weight,
        "patch_embed.bias": weights.patch_bias,
        "cls_token": weights.cls_token,
        "pos_embed": weights.pos_embed,
        "norm.gamma": weights.norm_gamma,
        "norm.beta": weights.norm_beta,
        "head.weight": weights.head_weight,
        "head.bias": weights.head_bias,
    }
    for i, blk in enumerate(weights.blocks):
        b = f"block{i}"
        tensors.update({
            f"{b}.ln1.gamma": blk.ln1_gamma,
            f"{b}.ln1.beta": blk.ln1_beta,
            f"{b}.W_Q": blk.w_q,
            f"{b}.b_Q": blk.b_q,
            f"{b}.W_K": blk.w_k,
            f"{b}.b_K": blk.b_k,
            f"{b}.W_V": blk.w_v,
            f"{b}.b_V": blk.b_v,
            f"{b}.W_O": blk.w_o,
            f"{b}.b_O": blk.b_o,
            f"{b}.ln2.gamma": blk.ln2_gamma,
            f"{b}.ln2.beta": blk.ln2_beta,
            f"{b}.mlp.W1": blk.mlp_w1,
            f"{b}.mlp.b1": blk.mlp_b1,
            f"{b}.mlp.W2": blk.mlp_w2,
            f"{b}.mlp.b2": blk.mlp_b2,
        })
    return tensors


def _weights_from_tensors(
    cfg: ModelConfig, tensors: dict[str, np.ndarray], mean, std
) -> ModelWeights:
    blocks = []
    for i in range(cfg.depth):
        b = f"block{i}"
        blocks.append(BlockWeights(
            w_q=tensors[f"{b}.W_Q"], b_q=tensors[f"{b}.b_Q"],
            w_k=tensors[f"{b}.W_K"], b_k=tensors[f"{b}.b_K"],
            w_v=tensors[f"{b}.W_V"], b_v=tensors[f"{b}.b_V"],
            w_o=tensors[f"{b}.W_O"], b_o=tensors[f"{b}.b_O"],
            ln1_gamma=tensors[f"{b}.ln1.gamma"], ln1_beta=tensors[f"{b}.ln1.beta"],
            ln2_gamma=tensors[f"{b}.ln2.gamma"], ln2_beta=tensors[f"{b}.ln2.beta"],
            mlp_w1=tensors[f"{b}.mlp.W1"], mlp_b1=tensors[f"{b}.mlp.b1"],
            mlp_w2=tensors[f"{b}.mlp.W2"], mlp_b2=tensors[f"{b}.mlp.b2"],
        ))
    return ModelWeights(
        patch_weight=tensors["patch_embed.weight"],
        patch_bias=tensors["patch_embed.bias"],
        cls_token=tensors["cls_token"],
        pos_embed=tensors["pos_embed"],
        blocks=tuple(blocks),
        norm_gamma=tensors["norm.gamma"],
        norm_beta=tensors["norm.beta"],
        head_weight=tensors["head.weight"],
        head_bias=tensors["head.bias"],
        input_mean=np.asarray(mean, dtype=np.float32),
        input_std=np.asarray(std, dtype=np.float32),
    )


def _config_to_json(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["prune_block_indices"] = list(d["prune_block_indices"])
    return d


def _config_from_json(d: dict) -> ModelConfig:
    try:
        d = dict(d)
        d["prune_block_indices"] = tuple(d.get("prune_block_indices", ()))
        return ModelConfig(**d)
    except (TypeError, ConfigError) as exc:
        raise WeightsError(f"manifest config invalid: {exc}") from None


def save_weights(path: str | os.PathLike, cfg: ModelConfig, weights: ModelWeights) -> None:
    """Write the canonical container; a save/load/save cycle is byte-stable."""
    tensors = _tensors_from_weights(cfg, weights)
    entries = []
    payload = bytearray()
    for name, shape in tensor_layout(cfg):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        if arr.shape != shape:
            raise WeightsError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "shape": list(shape),
            "offset": len(payload),
            "length": len(raw),
        })
        payload.extend(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": _config_to_json(cfg),
        "normalization": {
            "mean": [float(v) for v in weights.input_mean],
            "std": [float(v) for v in weights.input_std],
        },
        "entries": entries,
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(payload)


def load_weights(path: str | os.PathLike) -> tuple[ModelConfig, ModelWeights]:
    """Read and fully validate a weight container."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise WeightsError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 8:
        raise WeightsError("file truncated before manifest length")
    (manifest_len,) = struct.unpack("<I", data[4:8])
    blob = data[8 : 8 + manifest_len]
    if len(blob) < manifest_len:
        raise WeightsError("file truncated inside manifest")
    try:
        manifest = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsError(f"manifest is not valid JSON: {exc}") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise WeightsError(f"unsupported format_version {version!r}")
    cfg = _config_from_json(manifest.get("config", {}))
    norm = manifest.get("normalization", {})
    mean = tuple(norm.get("mean", DEFAULT_MEAN))
    std = tuple(norm.get("std", DEFAULT_STD))
    if len(mean) != 3 or len(std) != 3 or any(s <= 0 for s in std):
        raise WeightsError("normalization statistics must be three positive-std channels")

    payload = data[8 + manifest_len :]
    expected = dict(tensor_layout(cfg))
    seen: dict[str, np.ndarray] = {}
    spans: list[tuple[int, int, str]] = []
    for raw in manifest.get("entries", []):
        name = raw.get("name")
        if name not in expected:
            raise WeightsError(f"unexpected tensor {name!r} in manifest")
        if name in seen:
            raise WeightsError(f"duplicate manifest entry for {name!r}")
        shape = tuple(raw.get("shape", ()))
        if shape != expected[name]:
            raise WeightsError(
                f"tensor {name!r} has shape {list(shape)}, expected {list(expected[name])}"
            )
        offset, length = int(raw.get("offset", -1)), int(raw.get("length", -1))
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        if length != nbytes:
            raise WeightsError(f"tensor {name!r} length {length} != 4*prod(shape) {nbytes}")
        if offset < 0 or offset + length > len(payload):
            raise WeightsError(
                f"tensor {name!r} spans [{offset}, {offset + length}) outside payload "
                f"of {len(payload)} bytes"
            )
        spans.append((offset, offset + length, name))
        arr = np.frombuffer(payload, dtype="<f4", count=length // 4, offset=offset)
        seen[name] = arr.reshape(shape).copy()
    missing = sorted(set(expected) - set(seen))
    if missing:
        raise WeightsError(f"manifest missing tensor {missing[0]!r}")
    spans.sort()
    for (s0, e0, n0), (s1, _e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise WeightsError(f"tensors {n0!r} and {n1!r} overlap in the payload")
    return cfg, _weights_from_tensors(cfg, seen, mean, std)


def random_weights(cfg: ModelConfig, seed: int) -> ModelWeights:
    """Seeded random parameters; projections are scaled by 1/sqrt(fan_in).

    The scaling keeps activations and logits of stable magnitude through
    every block, so forward passes on random weights stay finite. The same
    (cfg, seed) pair always yields bit-identical tensors.
    """
    rng = np.random.default_rng(seed)

    def proj(fan_in: int, fan_out: int) -> np.ndarray:
        scale = 1.0 / np.sqrt(fan_in)
        return (rng.standard_normal((fan_in, fan_out)) * scale).astype(np.float32)

    def small(*shape: int) -> np.ndarray:
        return (rng.standard_normal(shape) * 0.02).astype(np.float32)

    d, dp, hid = cfg.embed_dim, cfg.qkv_dim, cfg.hidden_dim
    ones = lambda n: np.ones(n, dtype=np.float32)
    zeros = lambda n: np.zeros(n, dtype=np.float32)
    blocks = tuple(
        BlockWeights(
            w_q=proj(d, dp), b_q=zeros(dp),
            w_k=proj(d, dp), b_k=zeros(dp),
            w_v=proj(d, dp), b_v=zeros(dp),
            w_o=proj(dp, d), b_o=zeros(d),
            ln1_gamma=ones(d), ln1_beta=zeros(d),
            ln2_gamma=ones(d), ln2_beta=zeros(d),
            mlp_w1=proj(d, hid), mlp_b1=zeros(hid),
            mlp_w2=proj(hid, d), mlp_b2=zeros(d),
        )
        for _ in range(cfg.depth)
    )
    return ModelWeights(
        patch_weight=proj(cfg.patch_dim, d),
        patch_bias=zeros(d),
        cls_token=small(d),
        pos_embed=small(1 + cfg.num_patches, d),
        blocks=blocks,
        norm_gamma=ones(d),
        norm_beta=zeros(d),
        head_weight=proj(d, cfg.num_classes),
        head_bias=zeros(cfg.num_classes),
        input_mean=np.asarray(DEFAULT_MEAN, dtype=np.float32),
        input_std=np.asarray(DEFAULT_STD, dtype=np.float32),
    )
