"""Gated low-rank adapter lab: ablation-scored rank allocation on a miniature transformer."""

from ._core import (
    ConfigError,
    DimensionError,
    ModuleKind,
    Tensor,
    checkpoint_summary,
    distribute_growth,
    gelu,
    lr_at,
    matmul,
    resolved_config,
    run_experiment,
    sigmoid,
    softmax_cross_entropy,
    spearman,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "ModuleKind",
    "Tensor",
    "checkpoint_summary",
    "distribute_growth",
    "gelu",
    "lr_at",
    "matmul",
    "resolved_config",
    "run_experiment",
    "sigmoid",
    "softmax_cross_entropy",
    "spearman",
]
