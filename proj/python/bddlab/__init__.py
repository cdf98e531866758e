"""Balanced forward/reverse KL distillation: losses, synthetic data and experiments."""

from ._bdd import (
    ConfigError,
    DimensionError,
    DistillConfig,
    ParameterError,
    bdd_loss,
    bdd_loss_accumulated,
    bdd_seg_loss,
    forward_kl,
    gen_gaussian_mixture,
    gen_segmentation_grids,
    gradcheck,
    overall_loss,
    properties,
    reverse_kl,
    run_command,
    softmax_tau,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "DistillConfig",
    "ParameterError",
    "bdd_loss",
    "bdd_loss_accumulated",
    "bdd_seg_loss",
    "forward_kl",
    "gen_gaussian_mixture",
    "gen_segmentation_grids",
    "gradcheck",
    "overall_loss",
    "properties",
    "reverse_kl",
    "run_command",
    "softmax_tau",
]
