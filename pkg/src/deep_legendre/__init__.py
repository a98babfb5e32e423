"""Convex conjugates by grids, entropic smoothing and the Deep Legendre Transform."""
from .certificate import ErrorCertificate, certify, certify_points, implicit_residuals, z_value
from .dlt import DeepLegendreTransform, TrainConfig, TrainingError, TrainReport, evaluate_rmse, train
from .entropic import EntropicConfig, EntropicConjugate, low_discrepancy_points, softmax_conjugate
from .functions import BUILTIN_NAMES, ConvexFunction, Domain, Sampler, default_sampler, function_from_spec, make_builtin
from .grid import (CartesianGrid, GridConjugate, GridField, GridMemoryError, brute_force_conjugate, dual_grid,
                   dual_grid_bounds, interp_eval, llt_1d, llt_nested)
from .hopf import (HopfProblem, TimeDLT, analytic_quadratic_solution, exponential_problem, hj_metrics,
                   hopf_reference, quadratic_problem, sample_time_pairs, train_time_dlt)
from .inverse import (InverseGradientSampler, InverseSampler, InverseTrainConfig, generate_matched_sets,
                      inverse_quality, pretrain_inverse, refine_inverse)
from .nn import ArchSpec, NetworkModel, init, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ArchSpec",
    "BUILTIN_NAMES",
    "CartesianGrid",
    "ConvexFunction",
    "DeepLegendreTransform",
    "Domain",
    "EntropicConfig",
    "EntropicConjugate",
    "ErrorCertificate",
    "GridConjugate",
    "GridField",
    "GridMemoryError",
    "HopfProblem",
    "InverseGradientSampler",
    "InverseSampler",
    "InverseTrainConfig",
    "NetworkModel",
    "Sampler",
    "TimeDLT",
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "analytic_quadratic_solution",
    "brute_force_conjugate",
    "certify",
    "certify_points",
    "default_sampler",
    "dual_grid",
    "dual_grid_bounds",
    "evaluate_rmse",
    "exponential_problem",
    "function_from_spec",
    "generate_matched_sets",
    "hj_metrics",
    "hopf_reference",
    "implicit_residuals",
    "init",
    "interp_eval",
    "inverse_quality",
    "llt_1d",
    "llt_nested",
    "load_checkpoint",
    "low_discrepancy_points",
    "make_builtin",
    "pretrain_inverse",
    "quadratic_problem",
    "refine_inverse",
    "sample_time_pairs",
    "save_checkpoint",
    "softmax_conjugate",
    "train",
    "train_time_dlt",
    "z_value",
]
