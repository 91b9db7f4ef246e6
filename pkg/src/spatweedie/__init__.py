"""Penalized spatial effects on top of fitted compound Poisson-gamma DGLMs."""

from .graph import LaplacianView, SpatialGraph, build_graph, laplacian, quad_form, sparsity
from .optimizer import (
    FitResult,
    ObservationTable,
    PenaltyConfig,
    SolverError,
    descent_certificate,
    fit,
    gradient,
    hessian_diag,
    md_update,
    objective,
)
from .pipeline import LocationSummary, RunConfig, ingest, predict, replicate
from .simlab import (
    PatternSpec,
    SimConfig,
    deviance_ratio,
    generate_pattern,
    simulate_dataset,
    sse,
    synthetic_areal_graph,
    synthetic_multistate_graph,
)
from .tuning import CvReport, GridSpec, cross_validate, predictive_deviance, solution_path
from .tweedie import (
    NumericRangeError,
    PoissonGammaParams,
    TweedieSpec,
    cp_deviance,
    loglik_kernel,
    poisson_gamma_params,
    sample_cp,
    theta_to_mean,
)

__version__ = "0.1.0"
