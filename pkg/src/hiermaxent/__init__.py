"""Maximum-entropy canonical distributions and hierarchical mixtures of them.

The package builds canonical distributions ``pi(x) exp(sum_i lam_i f_i(x)) / Z``
over a bounded box, solves for the multipliers that enforce moment or
bin-probability constraints, samples hierarchical mixtures of canonical
distributions, and checks numerically that such a mixture depends on ``x``
only through its sufficient statistics.
"""

from hiermaxent.model_core import (
    BoxPrior,
    CanonicalDistribution,
    DiscreteDistribution,
    HierarchicalModel,
    HyperPrior,
    LogUniform,
    Statistic,
    UniformInterval,
    exponential_model,
    gaussian_model,
    link_exponential,
    link_gaussian,
    log_density_unnormalized,
    statistic_eval,
)
from hiermaxent.moment_solver import (
    MomentConstraintSet,
    SolveReport,
    expected_statistics,
    log_partition,
    solve_multipliers,
    truncated_exp_mean,
)
from hiermaxent.indicator import (
    BinConstraintSet,
    WeightedDiscreteModel,
    bin_indicator_features,
    brute_force_maxent,
    entropy,
    reweight,
    solve_bin_multipliers,
)
from hiermaxent.sampler import (
    HistogramSummary,
    ReferenceCdf,
    SeededStream,
    implied_statistic_histogram,
    ks_statistic,
    sample_conditional,
    sample_hierarchical,
    sample_hyper,
)
from hiermaxent.verification import (
    QuadratureSpec,
    implied_marginal_quadrature,
    marginal_log_density,
    sufficiency_check,
)

__version__ = "0.1.0"

__all__ = [
    "BinConstraintSet",
    "BoxPrior",
    "CanonicalDistribution",
    "DiscreteDistribution",
    "HierarchicalModel",
    "HistogramSummary",
    "HyperPrior",
    "LogUniform",
    "MomentConstraintSet",
    "QuadratureSpec",
    "ReferenceCdf",
    "SeededStream",
    "SolveReport",
    "Statistic",
    "UniformInterval",
    "WeightedDiscreteModel",
    "bin_indicator_features",
    "brute_force_maxent",
    "entropy",
    "expected_statistics",
    "exponential_model",
    "gaussian_model",
    "implied_marginal_quadrature",
    "implied_statistic_histogram",
    "ks_statistic",
    "link_exponential",
    "link_gaussian",
    "log_density_unnormalized",
    "log_partition",
    "marginal_log_density",
    "reweight",
    "sample_conditional",
    "sample_hierarchical",
    "sample_hyper",
    "solve_bin_multipliers",
    "solve_multipliers",
    "statistic_eval",
    "sufficiency_check",
    "truncated_exp_mean",
]
