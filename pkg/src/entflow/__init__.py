"""entflow: particle sampling from unnormalized densities.

The core sampler transports a particle cloud along the Wasserstein
gradient flow of relative entropy: each iteration fits a neural estimate
of log(u/q) by Bregman-score minimization and moves every particle one
Euler step along the gradient of that estimate.  Langevin (adjusted and
unadjusted) and kernelized Stein samplers are included for comparison,
together with closed-form evaluation oracles and an experiment harness.
"""

from ._mem import tune_allocator as _tune_allocator

_tune_allocator()

from .baselines import ChainConfig, run_chains, run_svgd, svgd_step
from .flow import FlowConfig, ParticleCloud, RunRecord, run_flow
from .metrics import TestFunction, analytic_mixture_expectation, mc_estimate, nearest_mode_histogram
from .nn import RatioNetwork, network_init
from .ratio import RatioBatch, TrainerConfig, bregman_loss_log, train_ratio, velocity_field
from .targets import (
    GaussianMixtureSpec,
    UnnormalizedTarget,
    make_ar_gaussian,
    make_blr_posterior,
    make_mixture,
    make_scenario,
    sample_exact,
)

__all__ = [
    "ChainConfig",
    "FlowConfig",
    "GaussianMixtureSpec",
    "ParticleCloud",
    "RatioBatch",
    "RatioNetwork",
    "RunRecord",
    "TestFunction",
    "TrainerConfig",
    "UnnormalizedTarget",
    "analytic_mixture_expectation",
    "bregman_loss_log",
    "make_ar_gaussian",
    "make_blr_posterior",
    "make_mixture",
    "make_scenario",
    "mc_estimate",
    "nearest_mode_histogram",
    "network_init",
    "run_chains",
    "run_flow",
    "run_svgd",
    "sample_exact",
    "svgd_step",
    "train_ratio",
    "velocity_field",
]

__version__ = "0.1.0"
