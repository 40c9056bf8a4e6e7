"""Ensemble kernel-density estimators of divergence functionals."""

from odin.kernel_core import (
    DistanceCache,
    KernelSpec,
    SampleSet,
    UNIFORM,
    kde_eval,
    min_positive_bandwidth,
    pairwise_chebyshev,
)
from odin.functionals import (
    EstimateResult,
    FunctionalSpec,
    g_kl,
    g_renyi,
    kl,
    parse_functional,
    plugin_estimate,
    renyi,
)
from odin.ensemble import (
    BasisSet,
    WeightSolution,
    odin1_basis,
    odin2_basis,
    solve_weights_exact,
    solve_weights_relaxed,
)
from odin.estimators import (
    EnsembleConfig,
    combined_estimate,
    ensemble_estimate,
    odin1_estimate,
    odin2_estimate,
)
from odin.distributions import (
    OracleValue,
    TruncatedGaussianSpec,
    tg_pdf,
    tg_sample,
    true_divergence,
)

__all__ = [
    "BasisSet",
    "DistanceCache",
    "EnsembleConfig",
    "EstimateResult",
    "FunctionalSpec",
    "KernelSpec",
    "OracleValue",
    "SampleSet",
    "TruncatedGaussianSpec",
    "UNIFORM",
    "WeightSolution",
    "combined_estimate",
    "ensemble_estimate",
    "g_kl",
    "g_renyi",
    "kde_eval",
    "kl",
    "min_positive_bandwidth",
    "odin1_basis",
    "odin1_estimate",
    "odin2_basis",
    "odin2_estimate",
    "pairwise_chebyshev",
    "parse_functional",
    "plugin_estimate",
    "renyi",
    "solve_weights_exact",
    "solve_weights_relaxed",
    "tg_pdf",
    "tg_sample",
    "true_divergence",
]
