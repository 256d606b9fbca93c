"""DeiT-S-shaped Vision Transformer forward pass with staged patch pruning.

The model is a standard pre-norm ViT: overlapping-capable patch embedding,
class token, learned position embeddings, and ``depth`` transformer blocks.
Designated blocks prune patch tokens right after the attention residual:
the class token's per-head attention rows are scored by the configured
indicator, the top-k patches survive, and (optionally) the discarded rows
are condensed into one fusion token appended at the end of the sequence.
A fusion token carried over from an earlier stage rides along in attention,
is scored like any other candidate, and is absorbed into the next stage's
fusion token, so the sequence never carries more than one.

Weights are immutable after load and shareable across threads; each forward
pass owns its activations, so concurrent passes over distinct inputs are
safe. There is no batch dimension; batching is concurrent independent
passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from .images import ImageRGB
from .kernels import OpCounter, ShapeError, gelu, layernorm, matmul, softmax_rows
from .pruning import (
    INDICATOR_KINDS,
    ClassAttention,
    PruneDecision,
    fuse,
    indicator_scores,
    keep_count,
    select_topk,
)

FUSION_ORIGIN = "fusion"

# token provenance: a patch grid cell (row, col) or the fusion tag
PatchOrigin = Union[tuple[int, int], str]


class ConfigError(ValueError):
    """Model configuration violates an invariant."""


class PruningError(ValueError):
    """A pruning stage cannot produce a valid reduced sequence."""


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and pruning configuration.

    ``stride`` and ``qkv_dim`` default to ``patch_size`` and ``embed_dim``;
    overlapping patch mode sets ``stride = patch_size * 3 // 4``.
    ``prune_block_indices`` are 1-indexed block positions. Pruning runs only
    when ``indicator`` is not ``"none"``; ``keep_rate == 1.0`` is a valid
    no-op configuration.
    """

    image_size: int = 224
    patch_size: int = 16
    stride: int | None = None
    embed_dim: int = 384
    qkv_dim: int | None = None
    heads: int = 6
    depth: int = 12
    mlp_ratio: float = 4.0
    num_classes: int = 100
    prune_block_indices: tuple[int, ...] = (4, 7, 10)
    keep_rate: float = 1.0
    indicator: str = "none"
    fusion_enabled: bool = False
    temperature: float = 0.25

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", self.patch_size)
        if self.qkv_dim is None:
            object.__setattr__(self, "qkv_dim", self.embed_dim)
        object.__setattr__(
            self, "prune_block_indices", tuple(int(i) for i in self.prune_block_indices)
        )
        for name in ("image_size", "patch_size", "embed_dim", "qkv_dim", "heads",
                     "depth", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.qkv_dim % self.heads != 0:
            raise ConfigError(
                f"qkv_dim {self.qkv_dim} must be divisible by heads {self.heads}"
            )
        if not 1 <= self.stride <= self.patch_size:
            raise ConfigError(
                f"stride {self.stride} must be in [1, patch_size={self.patch_size}]"
            )
        if self.patch_size > self.image_size:
            raise ConfigError(
                f"patch_size {self.patch_size} exceeds image_size {self.image_size}"
            )
        if self.mlp_ratio <= 0:
            raise ConfigError("mlp_ratio must be positive")
        idx = self.prune_block_indices
        if any(b >= a for a, b in zip(idx[1:], idx)):
            raise ConfigError("prune_block_indices must be strictly increasing")
        if idx and not (1 <= idx[0] and idx[-1] <= self.depth):
            raise ConfigError(f"prune_block_indices must lie in [1, {self.depth}]")
        if not 0.0 < self.keep_rate <= 1.0:
            raise ConfigError(f"keep_rate must be in (0, 1], got {self.keep_rate}")
        if not 0.0 < self.temperature <= 1.0:
            raise ConfigError(f"temperature must be in (0, 1], got {self.temperature}")
        if self.indicator not in INDICATOR_KINDS:
            raise ConfigError(
                f"indicator must be one of {INDICATOR_KINDS}, got {self.indicator!r}"
            )

    @property
    def head_dim(self) -> int:
        return self.qkv_dim // self.heads

    @property
    def hidden_dim(self) -> int:
        return int(round(self.mlp_ratio * self.embed_dim))

    @property
    def grid_side(self) -> int:
        return (self.image_size - self.patch_size) // self.stride + 1

    @property
    def num_patches(self) -> int:
        return self.grid_side * self.grid_side

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_size * self.patch_size

    @property
    def pruning_active(self) -> bool:
        return self.indicator != "none"

    def with_overlap(self) -> "ModelConfig":
        """Overlapping patch variant: stride is three quarters of the patch size."""
        return replace(self, stride=self.patch_size * 3 // 4)


@dataclass(frozen=True)
class TokenSequence:
    """Token embeddings plus provenance for every non-class token.

    Row 0 is always the class token; a fusion token, when present, is the
    last row. ``origins`` runs parallel to rows 1..n-1.
    """

    tokens: np.ndarray
    origins: tuple[PatchOrigin, ...]
    has_fusion: bool = False

    def __post_init__(self):
        if self.tokens.ndim != 2 or self.tokens.shape[0] < 1:
            raise ShapeError("token matrix must be 2-D with at least the class row")
        if len(self.origins) != self.tokens.shape[0] - 1:
            raise ShapeError("one origin per non-class token is required")
        if self.has_fusion and (not self.origins or self.origins[-1] != FUSION_ORIGIN):
            raise ShapeError("fusion token must be the last row")

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]


@dataclass(frozen=True)
class BlockWeights:
    """Per-block projection, layernorm, and MLP parameters."""

    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray


@dataclass(frozen=True)
class ModelWeights:
    """Full parameter set plus the input normalization statistics."""

    patch_weight: np.ndarray
    patch_bias: np.ndarray
    cls_token: np.ndarray
    pos_embed: np.ndarray
    blocks: tuple[BlockWeights, ...]
    norm_gamma: np.ndarray
    norm_beta: np.ndarray
    head_weight: np.ndarray
    head_bias: np.ndarray
    input_mean: np.ndarray = field(
        default_factory=lambda: np.array([0.485, 0.456, 0.406], dtype=np.float32)
    )
    input_std: np.ndarray = field(
        default_factory=lambda: np.array([0.229, 0.224, 0.225], dtype=np.float32)
    )


@dataclass(frozen=True)
class StageRecord:
    """What one pruning stage decided, with provenance for visualization."""

    block_index: int
    decision: PruneDecision
    kept_origins: tuple[PatchOrigin, ...]
    pruned_origins: tuple[PatchOrigin, ...]


def normalize_image(image: ImageRGB, weights: ModelWeights) -> np.ndarray:
    """Scale pixels to [0, 1] and standardize per channel."""
    arr = image.to_array().astype(np.float32) / np.float32(255.0)
    return (arr - weights.input_mean) / weights.input_std


def embed_patches(
    image: ImageRGB,
    cfg: ModelConfig,
    weights: ModelWeights,
    counter: OpCounter | None = None,
) -> TokenSequence:
    """Project strided patch windows to tokens and prepend the class token.

    Patch vectors are flattened in (row, col, channel) order. Position
    embeddings must already be sized for the configured grid.
    """
    if (image.width, image.height) != (cfg.image_size, cfg.image_size):
        raise ShapeError(
            f"image is {image.width}x{image.height}, model expects "
            f"{cfg.image_size}x{cfg.image_size}"
        )
    side = cfg.grid_side
    expected_pos = (1 + cfg.num_patches, cfg.embed_dim)
    if weights.pos_embed.shape != expected_pos:
        raise ShapeError(
            f"position embedding is {weights.pos_embed.shape}, grid needs {expected_pos}"
        )
    arr = normalize_image(image, weights)
    p, s = cfg.patch_size, cfg.stride
    patches = np.empty((cfg.num_patches, cfg.patch_dim), dtype=np.float32)
    origins: list[PatchOrigin] = []
    for gy in range(side):
        for gx in range(side):
            window = arr[gy * s : gy * s + p, gx * s : gx * s + p, :]
            patches[gy * side + gx] = window.reshape(-1)
            origins.append((gy, gx))
    patch_tokens = matmul(patches, weights.patch_weight, counter) + weights.patch_bias
    tokens = np.concatenate([weights.cls_token[None, :], patch_tokens], axis=0)
    tokens = tokens + weights.pos_embed
    return TokenSequence(tokens=tokens, origins=tuple(origins), has_fusion=False)


def mhsa_forward(
    seq: TokenSequence,
    w: BlockWeights,
    cfg: ModelConfig,
    counter: OpCounter | None = None,
) -> tuple[TokenSequence, ClassAttention]:
    """Pre-norm multi-head self-attention sublayer (residual not included).

    Returns the projected attention output (same token count and width) and
    the class token's softmaxed per-head attention over all other tokens,
    scaled by 1/sqrt(head_dim).
    """
    x = seq.tokens
    n = x.shape[0]
    normed = layernorm(x, w.ln1_gamma, w.ln1_beta)
    q = matmul(normed, w.w_q, counter) + w.b_q
    k = matmul(normed, w.w_k, counter) + w.b_k
    v = matmul(normed, w.w_v, counter) + w.b_v
    dh = cfg.head_dim
    scale = np.float32(1.0 / np.sqrt(dh))
    out = np.empty((n, cfg.qkv_dim), dtype=np.float32)
    per_head_class = np.empty((cfg.heads, n - 1), dtype=np.float32)
    class_self = np.empty(cfg.heads, dtype=np.float32)
    for h in range(cfg.heads):
        cols = slice(h * dh, (h + 1) * dh)
        logits = matmul(q[:, cols], k[:, cols].T, counter) * scale
        attn = softmax_rows(logits)
        out[:, cols] = matmul(attn, v[:, cols], counter)
        per_head_class[h] = attn[0, 1:]
        class_self[h] = attn[0, 0]
    y = matmul(out, w.w_o, counter) + w.b_o
    attn_info = ClassAttention(
        per_head=per_head_class,
        candidate_indices=np.arange(1, n),
        class_self_weight=class_self,
    )
    return TokenSequence(y, seq.origins, seq.has_fusion), attn_info


def _mlp(x: np.ndarray, w: BlockWeights, counter: OpCounter | None) -> np.ndarray:
    normed = layernorm(x, w.ln2_gamma, w.ln2_beta)
    hidden = gelu(matmul(normed, w.mlp_w1, counter) + w.mlp_b1)
    return matmul(hidden, w.mlp_w2, counter) + w.mlp_b2


def block_forward(
    seq: TokenSequence,
    w: BlockWeights,
    cfg: ModelConfig,
    counter: OpCounter | None = None,
) -> TokenSequence:
    """Plain pre-norm block: attention residual then MLP residual."""
    attn_out, _ = mhsa_forward(seq, w, cfg, counter)
    x = seq.tokens + attn_out.tokens
    x = x + _mlp(x, w, counter)
    return TokenSequence(x, seq.origins, seq.has_fusion)


def _pruning_block(
    seq: TokenSequence,
    w: BlockWeights,
    cfg: ModelConfig,
    block_index: int,
    counter: OpCounter | None,
) -> tuple[TokenSequence, StageRecord]:
    """Block that prunes after the attention residual and before the MLP."""
    attn_out, attn_info = mhsa_forward(seq, w, cfg, counter)
    mid = seq.tokens + attn_out.tokens

    scores = indicator_scores(attn_info, cfg.indicator)
    origins = seq.origins
    patch_cols = [i for i, o in enumerate(origins) if o != FUSION_ORIGIN]
    fusion_cols = [i for i, o in enumerate(origins) if o == FUSION_ORIGIN]
    if not patch_cols:
        raise PruningError(f"block {block_index} has no keepable patch tokens")

    patch_scores = replace(
        scores,
        scores=scores.scores[patch_cols],
        candidate_indices=scores.candidate_indices[patch_cols],
    )
    decision = select_topk(patch_scores, cfg.keep_rate)

    # a carried-over fusion token is always re-fused, never kept outright
    fuse_cols = [i for i in patch_cols if (i + 1) in set(decision.pruned)] + fusion_cols
    build_fusion = cfg.fusion_enabled and bool(fuse_cols)
    decision = replace(decision, fusion_token_built=build_fusion)

    kept_rows = [int(r) for r in decision.kept]
    parts = [mid[0:1], mid[kept_rows]]
    new_origins: list[PatchOrigin] = [origins[r - 1] for r in kept_rows]
    if build_fusion:
        fuse_rows = [c + 1 for c in fuse_cols]
        fused = fuse(mid[fuse_rows], scores.scores[fuse_cols], cfg.temperature)
        parts.append(fused[None, :])
        new_origins.append(FUSION_ORIGIN)

    tokens = np.concatenate(parts, axis=0)
    tokens = tokens + _mlp(tokens, w, counter)
    record = StageRecord(
        block_index=block_index,
        decision=decision,
        kept_origins=tuple(origins[r - 1] for r in decision.kept),
        pruned_origins=tuple(origins[r - 1] for r in decision.pruned),
    )
    return TokenSequence(tokens, tuple(new_origins), has_fusion=build_fusion), record


def forward(
    image: ImageRGB,
    weights: ModelWeights,
    cfg: ModelConfig,
    counter: OpCounter | None = None,
) -> tuple[np.ndarray, list[StageRecord]]:
    """Full forward pass: logits for the class token plus per-stage records."""
    seq = embed_patches(image, cfg, weights, counter)
    prune_at = set(cfg.prune_block_indices) if cfg.pruning_active else set()
    records: list[StageRecord] = []
    for block_index in range(1, cfg.depth + 1):
        w = weights.blocks[block_index - 1]
        if block_index in prune_at:
            seq, record = _pruning_block(seq, w, cfg, block_index, counter)
            records.append(record)
        else:
            seq = block_forward(seq, w, cfg, counter)
    final = layernorm(seq.tokens[0:1], weights.norm_gamma, weights.norm_beta)
    logits = matmul(final, weights.head_weight, counter)[0] + weights.head_bias
    return logits, records


def stage_kept_counts(cfg: ModelConfig) -> list[int]:
    """Patch tokens surviving each pruning stage, from the config alone."""
    counts = []
    candidates = cfg.num_patches
    if cfg.pruning_active:
        for _ in cfg.prune_block_indices:
            candidates = keep_count(cfg.keep_rate, candidates)
            counts.append(candidates)
    return counts
