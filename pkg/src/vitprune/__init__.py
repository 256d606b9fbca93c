"""Vision Transformer inference with staged attention-diversity patch pruning."""

from .flops import FlopsReport, block_macs, model_gflops, model_macs, token_schedule
from .images import ImageError, ImageRGB, load_image, read_ppm, resize_nearest, write_ppm
from .kernels import Matrix, OpCounter, ShapeError, gelu, layernorm, matmul, softmax_rows
from .model import (
    BlockWeights,
    ConfigError,
    ModelConfig,
    ModelWeights,
    PruningError,
    StageRecord,
    TokenSequence,
    block_forward,
    embed_patches,
    forward,
    mhsa_forward,
    stage_kept_counts,
)
from .model_io import WeightsError, load_weights, random_weights, save_weights
from .pruning import (
    ClassAttention,
    IndicatorScores,
    PruneDecision,
    fuse,
    fusion_weights,
    indicator_scores,
    keep_count,
    mean_score,
    medad_score,
    select_topk,
    variance_score,
)

__version__ = "0.1.0"
