"""Canonical divergence analysis.

Discovers pairs of linear canonical vectors aligning two datasets of
different dimensionality and sample counts (no joint distribution needed) by
minimizing a divergence between the projected distributions.
"""

from .baselines import CcaResult, fit_linear_cca
from .dataset import DataSet, from_values, load_csv, rescale_unit, save_csv, whiten
from .divergence import (
    Bandwidths,
    DivergenceSpec,
    RatioModel,
    fit_ratio_model,
    mallows_gradient,
    mallows_value,
    median_bandwidths,
    pearson_gradient,
    pearson_multi_value,
    pearson_value,
    quadratic_gradient,
    quadratic_value,
)
from .errors import CdaError, DataError, FitError
from .evaluation import (
    BenchReport,
    ClusterRecord,
    cluster_distance,
    cluster_potential,
    recovery_error,
    run_benchmark,
    subspace_error,
)
from .scaling import ScalingMatrix, ScalingMode, beta_rule
from .solver import (
    CanonicalBasis,
    SolverConfig,
    fit,
    fit_cda_pair,
    fit_mcda,
    fit_mrcda,
    fit_rcda_pair,
    project,
)
from .synthetic import GroundTruth, SyntheticSpec, generate_synthetic, ground_truth_for

__version__ = "0.1.0"

__all__ = [
    "Bandwidths",
    "BenchReport",
    "CanonicalBasis",
    "CcaResult",
    "CdaError",
    "ClusterRecord",
    "DataError",
    "DataSet",
    "DivergenceSpec",
    "FitError",
    "GroundTruth",
    "RatioModel",
    "ScalingMatrix",
    "ScalingMode",
    "SolverConfig",
    "SyntheticSpec",
    "beta_rule",
    "cluster_distance",
    "cluster_potential",
    "fit",
    "fit_cda_pair",
    "fit_linear_cca",
    "fit_mcda",
    "fit_mrcda",
    "fit_ratio_model",
    "fit_rcda_pair",
    "from_values",
    "generate_synthetic",
    "ground_truth_for",
    "load_csv",
    "mallows_gradient",
    "mallows_value",
    "median_bandwidths",
    "pearson_gradient",
    "pearson_multi_value",
    "pearson_value",
    "project",
    "quadratic_gradient",
    "quadratic_value",
    "recovery_error",
    "rescale_unit",
    "run_benchmark",
    "save_csv",
    "subspace_error",
    "whiten",
]
