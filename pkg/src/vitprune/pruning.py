"""Patch-importance indicators, top-k retention, and pruned-token fusion.

Importance is judged from the class token's attention over the candidate
tokens, one row per head. Three indicators are available:

* ``mean``     — average attention weight across heads (the classic
                 attention-magnitude criterion),
* ``variance`` — population variance of the weight across heads, so patches
                 the heads disagree about rank as important,
* ``medad``    — median absolute deviation across heads, a robust spread
                 measure that a single outlier head cannot inflate.

``select_topk`` keeps the highest-scoring candidates under a keep rate and
``fuse`` condenses the discarded rows into a single token via a
temperature-sharpened softmax over their scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kernels import softmax_rows

INDICATOR_KINDS = ("none", "mean", "variance", "medad")


@dataclass(frozen=True)
class ClassAttention:
    """Per-head attention weights from the class token to the candidate tokens.

    ``per_head`` is H x N with the class-token column already removed;
    ``candidate_indices`` maps each column back to its token row in the
    sequence. ``class_self_weight`` holds the excluded column so the full
    softmax row (which sums to 1) can be reconstructed.
    """

    per_head: np.ndarray
    candidate_indices: np.ndarray
    class_self_weight: np.ndarray | None = None

    def __post_init__(self):
        if self.per_head.ndim != 2:
            raise ValueError("per_head must be an H x N matrix")
        if self.per_head.shape[0] < 1:
            raise ValueError("attention must contain at least one head")
        if len(self.candidate_indices) != self.per_head.shape[1]:
            raise ValueError("candidate_indices must match the column count")

    @property
    def num_heads(self) -> int:
        return self.per_head.shape[0]

    @property
    def num_candidates(self) -> int:
        return self.per_head.shape[1]


@dataclass(frozen=True)
class IndicatorScores:
    """Non-negative importance score per candidate token."""

    scores: np.ndarray
    kind: str
    candidate_indices: np.ndarray

    def __post_init__(self):
        if self.scores.ndim != 1:
            raise ValueError("scores must be a vector")
        if len(self.candidate_indices) != len(self.scores):
            raise ValueError("candidate_indices must match the score count")


@dataclass(frozen=True)
class PruneDecision:
    """Partition of the candidate token indices into kept and pruned sets.

    Both index lists refer to the same token rows as
    ``scores.candidate_indices`` and preserve the original sequence order.
    """

    kept: np.ndarray
    pruned: np.ndarray
    scores: IndicatorScores
    fusion_token_built: bool = False


def _require_nonempty(attn: ClassAttention) -> None:
    if attn.num_candidates == 0:
        raise ValueError("attention has no candidate columns to score")


def mean_score(attn: ClassAttention) -> IndicatorScores:
    """Average attention weight across heads."""
    _require_nonempty(attn)
    scores = attn.per_head.mean(axis=0)
    return IndicatorScores(scores, "mean", attn.candidate_indices)


def variance_score(attn: ClassAttention) -> IndicatorScores:
    """Population variance of the attention weight across heads."""
    _require_nonempty(attn)
    scores = attn.per_head.var(axis=0)
    return IndicatorScores(scores, "variance", attn.candidate_indices)


def medad_score(attn: ClassAttention) -> IndicatorScores:
    """Median absolute deviation of the attention weight across heads.

    Both medians run over heads; with an even head count each median is the
    midpoint of the two central order statistics.
    """
    _require_nonempty(attn)
    med = np.median(attn.per_head, axis=0)
    scores = np.median(np.abs(attn.per_head - med), axis=0)
    return IndicatorScores(scores, "medad", attn.candidate_indices)


_SCORE_FNS = {"mean": mean_score, "variance": variance_score, "medad": medad_score}


def indicator_scores(attn: ClassAttention, kind: str) -> IndicatorScores:
    """Score candidates with the named indicator (``none`` is not scoreable)."""
    try:
        fn = _SCORE_FNS[kind]
    except KeyError:
        raise ValueError(f"unknown indicator kind {kind!r}") from None
    return fn(attn)


def keep_count(keep_rate: float, num_candidates: int) -> int:
    """Number of candidates retained: ``max(1, floor(r*N + 0.5))``."""
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError(f"keep_rate must be in (0, 1], got {keep_rate}")
    if num_candidates < 1:
        raise ValueError("need at least one candidate")
    return max(1, math.floor(keep_rate * num_candidates + 0.5))


def select_topk(scores: IndicatorScores, keep_rate: float) -> PruneDecision:
    """Keep the k highest-scoring candidates; ties go to the lower index.

    Kept and pruned index lists are reported in original sequence order.
    """
    n = len(scores.scores)
    k = keep_count(keep_rate, n)
    # stable argsort on negated scores: equal scores keep ascending position
    order = np.argsort(-np.asarray(scores.scores, dtype=np.float64), kind="stable")
    kept_pos = np.sort(order[:k])
    pruned_pos = np.sort(order[k:])
    idx = np.asarray(scores.candidate_indices)
    return PruneDecision(kept=idx[kept_pos], pruned=idx[pruned_pos], scores=scores)


def fusion_weights(scores: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of ``scores / temperature``; sums to 1, sharper for small T."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    scores = np.asarray(scores, dtype=np.float32)
    if scores.ndim != 1 or len(scores) < 1:
        raise ValueError("need a non-empty score vector")
    return softmax_rows((scores / np.float32(temperature))[None, :])[0]


def fuse(tokens: np.ndarray, scores: np.ndarray, temperature: float) -> np.ndarray:
    """Weighted sum of pruned token rows, weights from ``fusion_weights``.

    The result is a convex combination of the rows, so it stays inside
    their convex hull; a single row is returned unchanged.
    """
    tokens = np.asarray(tokens, dtype=np.float32)
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ValueError("need at least one token row to fuse")
    if tokens.shape[0] != len(scores):
        raise ValueError("one score per token row is required")
    w = fusion_weights(scores, temperature)
    return w @ tokens
