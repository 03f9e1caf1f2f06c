from lecam.core.divergences import (
    gaussian_kernel,
    median_heuristic,
    mmd2_linear,
    mmd2_unbiased,
    pearson_correlation,
    spearman_rank_correlation,
    tv_continuous,
    tv_discrete,
)
from lecam.core.estimator import (
    DeficiencyEstimate,
    DiscreteExperiment,
    OptimizerConfig,
    directional_gap,
    estimate_deficiency,
    gaussian_shift,
    sufficiency_check,
    symmetric_distortion,
    verify_risk_transfer,
)
from lecam.core.kernels import KernelFamily, KernelSpec, RngStream, apply_kernel, pathwise_apply

__all__ = [
    "DeficiencyEstimate",
    "DiscreteExperiment",
    "KernelFamily",
    "KernelSpec",
    "OptimizerConfig",
    "RngStream",
    "apply_kernel",
    "directional_gap",
    "estimate_deficiency",
    "gaussian_kernel",
    "gaussian_shift",
    "median_heuristic",
    "mmd2_linear",
    "mmd2_unbiased",
    "pathwise_apply",
    "pearson_correlation",
    "spearman_rank_correlation",
    "sufficiency_check",
    "symmetric_distortion",
    "tv_continuous",
    "tv_discrete",
    "verify_risk_transfer",
]
