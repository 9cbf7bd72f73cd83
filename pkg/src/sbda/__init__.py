"""Stochastic block dual averaging for nonsmooth and stochastic convex problems."""

from .blocks import BlockParams, BlockPartition, BlockVector, block_norm, block_view
from .geometry import DistanceFunction, Regularizer, bregman, prox_step_r, prox_step_u
from .oracles import (
    estimate_params,
    gen_l1_regression,
    gen_online_lasso,
    gen_transformed_ls,
    load_instance,
    reference_optimum,
    save_instance,
)
from .schedules import (
    SamplingDistribution,
    adaptive_gamma_convex,
    const_gamma_convex,
    joint_optimum,
    optimal_sampling,
    sample_block,
    sbda_r_adaptive_gamma,
    sbda_r_const_gamma,
    strongly_convex_aggressive,
    strongly_convex_simple,
)
from .solvers import (
    RunResult,
    average_output,
    baseline_da,
    baseline_md,
    baseline_sbmd,
    sbda_r,
    sbda_u,
)

__version__ = "0.1.0"
