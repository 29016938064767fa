"""Graph transformer for node classification built on decoupled
propagation/transformation message passing, with a self-contained
reverse-mode autodiff core."""

from .autodiff import Tape, Tensor, backward, zero_grad
from .bundle import GraphBundle, Split, edge_homophily, load_bundle, make_splits, save_bundle, sbm_generate
from .graph import CsrGraph, from_edge_list, mean_norm_weights, sym_norm_weights, with_self_loops
from .model import (
    FfnVariant,
    ModelConfig,
    ModelParams,
    ResidualMode,
    VanillaGtConfig,
    forward,
    init_model_params,
    init_vanilla_gt_params,
    vanilla_gt_forward,
)
from .operators import OperatorSpec, PropagatorKind
from .training import AdamW, RunResult, TrainConfig, cross_entropy_loss, run_multi_seed, train_one

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "CsrGraph",
    "FfnVariant",
    "GraphBundle",
    "ModelConfig",
    "ModelParams",
    "OperatorSpec",
    "PropagatorKind",
    "ResidualMode",
    "RunResult",
    "Split",
    "Tape",
    "Tensor",
    "TrainConfig",
    "VanillaGtConfig",
    "backward",
    "cross_entropy_loss",
    "edge_homophily",
    "forward",
    "from_edge_list",
    "init_model_params",
    "init_vanilla_gt_params",
    "load_bundle",
    "make_splits",
    "mean_norm_weights",
    "run_multi_seed",
    "save_bundle",
    "sbm_generate",
    "sym_norm_weights",
    "train_one",
    "vanilla_gt_forward",
    "with_self_loops",
    "zero_grad",
    "__version__",
]
