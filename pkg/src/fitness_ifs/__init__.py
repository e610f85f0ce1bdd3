"""Fitness model in a shared random environment and its self-affine stationary law."""

from ._util import DEFAULT_SEED, SEED_ENV_VAR, Estimate, default_seed, make_rng
from .affine import (
    AffineFamily,
    ChainState,
    LimitSample,
    TruncationBudgetError,
    forward_step,
    geometric_clock,
    partial_sum_paths,
    reversed_partial_sum,
    rho,
    sample_limit,
    sample_limit_geometric,
    sample_random_cdf,
    truncation_bound,
    truncation_depth,
)
from .multifractal import (
    IntervalCode,
    ae_exponent,
    d_exponent_min,
    d_point_exponents,
    digit_law_check,
    empirical_exponent,
    exponent_curves,
    locate,
    partition,
)
from .particles import (
    CouplingTrace,
    DimensionError,
    FitnessState,
    ModelParams,
    Trajectory,
    coupled_run,
    environment_word,
    pair_cdf_longrun,
    simulate,
    single_site_replicas,
    step,
)
from .stationary import (
    DenseSet,
    DPoint,
    MomentTable,
    cdf_bracket,
    d_point,
    enumerate_D,
    joint_moment,
    mean_closed_form,
    moments,
    single_site_cdf,
    single_site_density,
    verify_functional_equations,
)

__all__ = [name for name in dir() if not name.startswith("_")]
