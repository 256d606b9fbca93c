"""Analytic multiply-accumulate cost model for any pruning configuration.

Counting convention: one MAC per multiply-accumulate, and only matmul MACs
are counted (softmax, layernorm, GELU, and bias adds are sub-1% and
excluded). This matches the instrumented kernel exactly, so for any config
the analytic total equals the OpCounter tally of a real forward pass.

Per block with n tokens:

* QKV projections      3 * n * D * D'
* attention logits     n^2 * D'
* attention x values   n^2 * D'
* output projection    n * D' * D
* MLP                  2 * n * D * hidden

Pruning blocks run attention at the incoming token count and the MLP at
the reduced count. The embedding costs ``num_patches * patch_dim * D`` and
the classifier head ``D * num_classes``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ModelConfig
from .pruning import keep_count


@dataclass(frozen=True)
class BlockCost:
    index: int        # 1-based block position
    tokens_in: int    # tokens entering the block (attention sees this count)
    macs: int


@dataclass(frozen=True)
class FlopsReport:
    per_block: tuple[BlockCost, ...]
    embed_macs: int
    head_macs: int
    total_macs: int
    config: ModelConfig

    @property
    def total_gflops(self) -> float:
        return self.total_macs / 1e9


def attention_macs(tokens: int, cfg: ModelConfig) -> int:
    d, dp = cfg.embed_dim, cfg.qkv_dim
    return 3 * tokens * d * dp + 2 * tokens * tokens * dp + tokens * dp * d


def mlp_macs(tokens: int, cfg: ModelConfig) -> int:
    return 2 * tokens * cfg.embed_dim * cfg.hidden_dim


def block_macs(tokens: int, cfg: ModelConfig) -> int:
    """Cost of one block at a uniform token count."""
    if tokens < 1:
        raise ValueError("tokens must be at least 1")
    return attention_macs(tokens, cfg) + mlp_macs(tokens, cfg)


def token_schedule(cfg: ModelConfig) -> list[tuple[int, int]]:
    """(attention tokens, MLP tokens) per block, from the config alone.

    Mirrors the forward pass: at a pruning block the candidate pool is the
    current patch tokens, ``keep_count`` of them survive, and one fusion
    token is appended when fusion is enabled and there is anything to fuse
    (pruned patches or a carried-over fusion token).
    """
    schedule: list[tuple[int, int]] = []
    patches = cfg.num_patches
    has_fusion = False
    n = 1 + patches
    prune_at = set(cfg.prune_block_indices) if cfg.pruning_active else set()
    for block_index in range(1, cfg.depth + 1):
        n_attn = n
        if block_index in prune_at:
            k = keep_count(cfg.keep_rate, patches)
            pruned = patches - k
            has_fusion = cfg.fusion_enabled and (pruned > 0 or has_fusion)
            patches = k
            n = 1 + patches + (1 if has_fusion else 0)
        schedule.append((n_attn, n))
    return schedule


def model_macs(cfg: ModelConfig) -> FlopsReport:
    """Total MACs under the stage token schedule."""
    embed = cfg.num_patches * cfg.patch_dim * cfg.embed_dim
    head = cfg.embed_dim * cfg.num_classes
    per_block = []
    total = embed + head
    for index, (n_attn, n_mlp) in enumerate(token_schedule(cfg), start=1):
        macs = attention_macs(n_attn, cfg) + mlp_macs(n_mlp, cfg)
        per_block.append(BlockCost(index=index, tokens_in=n_attn, macs=macs))
        total += macs
    return FlopsReport(
        per_block=tuple(per_block),
        embed_macs=embed,
        head_macs=head,
        total_macs=total,
        config=cfg,
    )


def model_gflops(cfg: ModelConfig) -> FlopsReport:
    """Alias of :func:`model_macs`; read ``total_gflops`` off the report."""
    return model_macs(cfg)


def format_report(report: FlopsReport) -> str:
    """Human-readable per-block table."""
    lines = [
        "MAC accounting (1 MAC = 1 FLOP; matmul terms only)",
        f"embedding: {report.embed_macs:>16,} MACs",
    ]
    for bc in report.per_block:
        lines.append(f"block {bc.index:>2} ({bc.tokens_in:>4} tokens in): {bc.macs:>16,} MACs")
    lines.append(f"head:      {report.head_macs:>16,} MACs")
    lines.append(f"total:     {report.total_macs:>16,} MACs = {report.total_gflops:.2f} GFLOPs")
    return "\n".join(lines)
