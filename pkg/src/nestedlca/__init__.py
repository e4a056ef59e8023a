"""Nested EM and competing estimators for latent class models with covariates."""

from .errors import (
    DataError,
    DegenerateUnitError,
    DomainError,
    EmptyClassError,
    EstimationError,
    LCAError,
    ShapeError,
    SingularSystemError,
)
from .estimators import (
    ESTIMATORS,
    EstimatorConfig,
    FitResult,
    Initialization,
    fit,
    fit_em_two_class,
    fit_hybrid_em,
    fit_mm_em,
    fit_nested_em,
    fit_nr_em,
    fit_nr_em_q1,
    fit_three_step_classical,
    init_random,
    m_step_pi,
)
from .harness import BenchmarkReport, TrueModel, election_like_model, run_benchmark, simulate
from .model import (
    Dataset,
    ModelParams,
    class_probabilities,
    complete_loglik,
    expected_loglik_q1,
    log_likelihood,
    responsibilities,
)
from .polya_gamma import PgWeights, gls_update, pg_expectation, pg_weights_for_cycle

__version__ = "0.1.0"
