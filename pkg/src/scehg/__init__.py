"""Simultaneous clustering of subjects and recovery of cluster-specific graphs.

Typical use goes through :func:`scehg.pipeline.run_pipeline` or the
``scehg`` command; the numerical building blocks live in ``solvers``,
``covariance``, ``glasso``, ``sprclust``, ``tuning`` and ``simgen``.
"""

from .covariance import KernelConfig, SubjectSeries, subject_covariance
from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    EmptyInputError,
    InsufficientSamplesError,
    InvalidInputError,
    NotPositiveDefiniteError,
    NoValidComboError,
    ParseError,
    ScehgError,
)
from .glasso import glasso_cv, glasso_fit, vectorize_upper
from .pipeline import PipelineConfig, RunReport, edge_proportion, run_pipeline
from .simgen import Scenario, ScenarioSpec, cluster_metrics, generate_scenario, graph_metrics
from .solvers import SolverOptions, lasso_cd
from .sprclust import SprclustConfig, fit
from .tuning import TuningGrid, select_tuning

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DimensionMismatchError",
    "EmptyInputError",
    "InsufficientSamplesError",
    "InvalidInputError",
    "KernelConfig",
    "NoValidComboError",
    "NotPositiveDefiniteError",
    "ParseError",
    "PipelineConfig",
    "RunReport",
    "Scenario",
    "ScenarioSpec",
    "ScehgError",
    "SolverOptions",
    "SprclustConfig",
    "SubjectSeries",
    "TuningGrid",
    "cluster_metrics",
    "edge_proportion",
    "fit",
    "generate_scenario",
    "glasso_cv",
    "glasso_fit",
    "graph_metrics",
    "lasso_cd",
    "run_pipeline",
    "select_tuning",
    "subject_covariance",
    "vectorize_upper",
]
