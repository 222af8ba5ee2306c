"""Balanced Softmax and Meta Sampler for long-tailed classification, in numpy."""

from .datagen import (
    ClassCounts,
    Dataset,
    ImbalanceSpec,
    build_meta_set,
    gen_gaussian_mixture,
    make_longtail_counts,
    make_pareto_counts,
    oracle_posterior,
    split_shots,
    three_point_toy,
)
from .errors import (
    ContractViolation,
    DivergenceError,
    InvalidSpecError,
    ShapeError,
    UnsupportedQueryError,
)
from .evaluation import EvalReport, boundary_probe, evaluate, marginal_range, rate_variance
from .losses import (
    LossSpec,
    balanced_softmax_loss,
    binary_logistic_balanced_loss,
    margin_objective,
    optimal_margins,
    overbalance_ratio,
    softmax_ce,
)
from .meta import MetaConfig, hypergradient, meta_cycle, meta_loss, surrogate_step
from .model import ModelParams, backward, forward, freeze_extractor, init_params
from .sampler import SamplerState, class_balanced_batch, gumbel_st_sample, reconnect_loss
from .train import TrainConfig, run_ablation_grid, table5_grid, train, train_decoupled, train_end_to_end

__version__ = "0.1.0"
