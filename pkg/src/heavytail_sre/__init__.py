"""Simulation and tail analysis for diagonal stochastic recurrence equations.

The recursion X_t = A_t * X_{t-1} + B_t with componentwise products and
i.i.d. coefficient pairs has, under a negative log drift, a unique
stationary law with power-law marginals.  This package simulates that law,
solves the per-coordinate moment equations for the tail exponents, groups
coordinates whose rescaled coefficients agree almost surely, and estimates
the resulting tail constants, angular measures, and joint-tail decay
rates, each with an internal consistency check against an independent
estimator.
"""

from .blocks import BlockPartition, detect_blocks, project_block
from .common import (
    AmbiguousPartitionError,
    ConfigurationError,
    DivergenceError,
    Estimate,
    LadderError,
    NonContractiveError,
    TailIndexError,
    TauHeavinessError,
    chain_stream,
    diagnostic_stream,
    stage_stream,
)
from .geometry import AlphaNorm, alpha_norm, dilate, polar, subadditivity_constant
from .independence import (
    CustomTau,
    GammaBound,
    JointExceedance,
    LogLogTau,
    LogTau,
    PowerTau,
    ProductTau,
    Tau,
    build_tau,
    decay_rate_fit,
    joint_exceedance,
    submultiplicativity_check,
    tau_gamma_bound,
)
from .model import LogMoment, ModelSpec, log_moment, sample_pair
from .moments import (
    AbscissaScan,
    AlphaRoot,
    PositivityReport,
    TailProfile,
    cross_kappa,
    goldie_mean,
    kappa,
    moment_abscissa,
    positivity_check,
    solve_alpha,
    tail_profile,
)
from .simulate import (
    SamplePool,
    default_burn_in,
    drift_diagnostics,
    exceedance_filter,
    iterate,
    stationary_pool,
)
from .tails import (
    BlockTailLadder,
    GoldieConstant,
    HillEstimate,
    MomentCheck,
    SpectralEstimate,
    TailConstantLadder,
    TailConstants,
    block_tail_constant,
    empirical_tail_constant,
    goldie_constant,
    hill_estimate,
    moment_estimate,
    quantile_ladder,
    spectral_measure,
)

__version__ = "0.1.0"

__all__ = [
    "AbscissaScan",
    "AlphaNorm",
    "AlphaRoot",
    "AmbiguousPartitionError",
    "BlockPartition",
    "BlockTailLadder",
    "ConfigurationError",
    "CustomTau",
    "DivergenceError",
    "Estimate",
    "GammaBound",
    "GoldieConstant",
    "HillEstimate",
    "JointExceedance",
    "LadderError",
    "LogLogTau",
    "LogMoment",
    "LogTau",
    "ModelSpec",
    "MomentCheck",
    "NonContractiveError",
    "PositivityReport",
    "PowerTau",
    "ProductTau",
    "SamplePool",
    "SpectralEstimate",
    "TailConstantLadder",
    "TailConstants",
    "TailIndexError",
    "TailProfile",
    "Tau",
    "TauHeavinessError",
    "alpha_norm",
    "block_tail_constant",
    "build_tau",
    "chain_stream",
    "cross_kappa",
    "decay_rate_fit",
    "default_burn_in",
    "detect_blocks",
    "diagnostic_stream",
    "drift_diagnostics",
    "dilate",
    "empirical_tail_constant",
    "exceedance_filter",
    "goldie_constant",
    "goldie_mean",
    "hill_estimate",
    "iterate",
    "joint_exceedance",
    "kappa",
    "log_moment",
    "moment_abscissa",
    "moment_estimate",
    "polar",
    "positivity_check",
    "project_block",
    "quantile_ladder",
    "sample_pair",
    "solve_alpha",
    "spectral_measure",
    "stage_stream",
    "stationary_pool",
    "subadditivity_constant",
    "submultiplicativity_check",
    "tail_profile",
    "tau_gamma_bound",
]
