"""Parameter inference for differential equations with operator-constrained Gaussian processes."""

from .errors import (
    ArgumentError, DimensionError, GprcError, GridError, IllConditionedError, MissingFieldError,
    OrderError, SolverBlowupError, TrainingError,
)
from .gp import ChiConfig, Dataset, FieldEstimate, GprcModel, NoiseConfig, OptimizerConfig
from .inference import Chain, MhConfig, Prior, build_posterior, chain_stats, mh_sample, run_chain
from .kernels import KernelHyper
from .linearization import PicardConfig, picard_solve
from .operators import EquationSpec, LinearOperator, OperatorTerm
from .problems import ProblemConfig, builtin, simulate

__version__ = "0.1.0"

__all__ = [
    "ArgumentError", "DimensionError", "GprcError", "GridError", "IllConditionedError",
    "MissingFieldError", "OrderError", "SolverBlowupError", "TrainingError",
    "ChiConfig", "Dataset", "FieldEstimate", "GprcModel", "NoiseConfig", "OptimizerConfig",
    "Chain", "MhConfig", "Prior", "build_posterior", "chain_stats", "mh_sample", "run_chain",
    "KernelHyper", "PicardConfig", "picard_solve", "EquationSpec", "LinearOperator", "OperatorTerm",
    "ProblemConfig", "builtin", "simulate",
]
