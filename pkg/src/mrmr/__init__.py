"""Joint sparse regression for mixed continuous, count and binary responses."""

from .errors import (
    ConvergenceWarning,
    DataFormatError,
    DomainError,
    FitError,
    MRMRError,
    NonFiniteError,
    NotPositiveDefiniteError,
    SingularSystemError,
)
from .evaluation import (
    BenchmarkConfig,
    BenchmarkReport,
    correlation_report,
    export_diagnostics,
    loss_matrices,
    loss_predictions,
    run_benchmark,
    split_protocols,
)
from .glasso import GlassoConfig, glasso_fit
from .mcem import FitConfig, FittedModel, fit, predict
from .model import MixedDataset, PrecisionMatrix, ResponseSchema, map_pi, map_pi_inv
from .sampler import LatentSampleTensor, McmcConfig, e_step
from .sglm import fit_sglm, predict_sglm
from .simgen import SimDesign, simulate
from .tuning import TuningGrid, ebic, grid_search

__version__ = "0.1.0"
