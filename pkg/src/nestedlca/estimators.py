"""Fitting routines for latent class regression.

Every one-step estimator shares the same outer EM skeleton: an E-step for the
class responsibilities, the closed-form M-step for the response profiles, and
then an update of the class-membership coefficients that differs by method:

- ``nested_em``: R-1 conditional cycles, each a Polya-gamma EM step solved by
  weighted least squares, with responsibilities refreshed between cycles.
- ``nr_em_q1``: one Newton step on the expected class-membership
  log-likelihood (soft-label multinomial logit).
- ``nr_em``: one Newton step using the score and Hessian of the observed-data
  log-likelihood in beta.
- ``mm_em``: one step with Bohning's fixed curvature bound.
- ``hybrid_em``: nested EM until the increment drops to ``epsilon``, then
  ``nr_em_q1`` steps.

``three_step`` fits a latent class model without covariates, assigns modal
classes and regresses them on the covariates.

The log-likelihood trace starts at the initial values; iteration ``t`` adds
entry ``t``. Runs stop as soon as an increment falls below ``tol`` (so a decay
also stops a run, as in the classic implementations).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import DataError, EmptyClassError, EstimationError, SingularSystemError
from .model import (
    Dataset,
    ModelParams,
    class_probabilities,
    linear_predictors,
    log_class_probabilities,
    log_item_densities,
    log_likelihood,
    posterior,
    row_logsumexp,
)
from .polya_gamma import MAX_CONDITION, gls_update, pg_weights_for_cycle

EMPTY_CLASS_MASS = 1e-10


@dataclass(frozen=True)
class EstimatorConfig:
    tol: float = 1e-11
    max_iter: int = 100_000
    epsilon: float = 0.01
    alpha: float = 1.0
    decay_slack: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise DataError("tol must be positive")
        if not 0 < self.alpha <= 1:
            raise DataError("alpha must lie in (0, 1]")
        if not self.epsilon >= 0:
            raise DataError("epsilon must be non-negative")
        if self.max_iter < 1:
            raise DataError("max_iter must be at least 1")


@dataclass(frozen=True, eq=False)
class Initialization:
    params: ModelParams


@dataclass(eq=False)
class FitResult:
    algorithm: str
    params: ModelParams
    loglik_trace: np.ndarray
    iterations: int
    converged: bool
    decay_count: int
    wall_time: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])


@dataclass(frozen=True, eq=False)
class CycleRecord:
    """One nested cycle, as passed to the ``on_cycle`` hook of nested EM."""

    iteration: int
    class_index: int
    beta_before: np.ndarray
    beta_after: np.ndarray
    sbar: np.ndarray


def count_decays(trace, slack: float) -> int:
    trace = np.asarray(trace, dtype=float)
    return int(np.sum(trace[1:] < trace[:-1] - slack))


def init_random(dataset: Dataset, n_classes: int, seed: int) -> Initialization:
    """Gaussian(0, 0.5) coefficients and flat-Dirichlet response profiles."""
    if n_classes < 1:
        raise DataError("need at least one class")
    rng = np.random.default_rng(seed)
    beta = rng.normal(0.0, np.sqrt(0.5), size=(n_classes - 1, dataset.n_covariates))
    pi = tuple(rng.dirichlet(np.ones(k), size=n_classes) for k in dataset.category_counts)
    return Initialization(ModelParams(beta, pi))


def m_step_pi(sbar: np.ndarray, dataset: Dataset) -> tuple[np.ndarray, ...]:
    """Responsibility-weighted category frequencies, one (R, K_j) array per item."""
    sbar = np.asarray(sbar, dtype=float)
    mass = sbar.sum(axis=0)
    if np.any(mass < EMPTY_CLASS_MASS):
        r = int(np.argmin(mass))
        raise EmptyClassError(r, float(mass[r]))
    counts = (dataset.indicators.T @ sbar) / mass
    off = dataset.item_offsets
    pi = []
    for j in range(dataset.n_items):
        p = counts[off[j]:off[j + 1]].T
        # renormalize away roundoff so the rows are exact simplices
        pi.append(p / p.sum(axis=1, keepdims=True))
    return tuple(pi)


# -- coefficient-update building blocks --------------------------------------


def q1_score(sbar: np.ndarray, nu: np.ndarray, design: np.ndarray) -> np.ndarray:
    """Gradient of the class-membership log-likelihood in beta, shape (R-1, P).

    Identical to the gradient of the observed-data log-likelihood when
    ``sbar`` are the current responsibilities.
    """
    return (sbar - nu)[:, :-1].T @ design


def _block_hessian(weights: np.ndarray, design: np.ndarray) -> np.ndarray:
    # weights: (n, R-1, R-1) per-unit curvature; result stacked by class blocks
    k, p = weights.shape[1], design.shape[1]
    h = np.einsum("irl,ip,iq->rplq", weights, design, design, optimize=True)
    return h.reshape(k * p, k * p)


def _softmax_curvature(prob: np.ndarray) -> np.ndarray:
    p = prob[:, :-1]
    w = -p[:, :, None] * p[:, None, :]
    idx = np.arange(p.shape[1])
    w[:, idx, idx] += p
    return w


def q1_hessian(nu: np.ndarray, design: np.ndarray) -> np.ndarray:
    """Hessian of the soft-label multinomial logit log-likelihood,
    blocks -sum_i nu_ir (delta_rl - nu_il) x_i x_i'."""
    return -_block_hessian(_softmax_curvature(nu), design)


def observed_hessian(sbar: np.ndarray, nu: np.ndarray, design: np.ndarray) -> np.ndarray:
    """Hessian in beta of the observed-data log-likelihood at fixed profiles."""
    return _block_hessian(_softmax_curvature(sbar) - _softmax_curvature(nu), design)


def bohning_bound(n_classes: int, design: np.ndarray) -> np.ndarray:
    """0.5 (I - 11'/R) kron X'X, which dominates the negative Q1 Hessian."""
    k = n_classes - 1
    a = 0.5 * (np.eye(k) - np.ones((k, k)) / n_classes)
    return np.kron(a, design.T @ design)


def _newton_direction(hessian: np.ndarray, score: np.ndarray, scale: float | None = None) -> np.ndarray:
    # scale: magnitude of the terms that were summed into the Hessian, so a
    # matrix that is zero up to cancellation error is not mistaken for a solvable one
    cond = np.linalg.cond(hessian)
    negligible = scale is not None and np.abs(hessian).max() <= 1e-10 * scale
    if negligible or not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularSystemError(f"Newton system ill-conditioned (condition {cond:.3g})")
    return -np.linalg.solve(hessian, score.ravel()).reshape(score.shape)


# -- iteration state and loop ------------------------------------------------


@dataclass(eq=False)
class _State:
    beta: np.ndarray
    pi: tuple[np.ndarray, ...]
    log_dens: np.ndarray
    log_nu: np.ndarray

    @classmethod
    def start(cls, params: ModelParams, dataset: Dataset) -> _State:
        params.check_against(dataset)
        return cls(
            params.beta.copy(),
            params.pi,
            log_item_densities(params.pi, dataset),
            log_class_probabilities(params.beta, dataset.design),
        )

    @property
    def loglik(self) -> float:
        return float(np.sum(row_logsumexp(self.log_nu + self.log_dens)))

    def sbar(self) -> np.ndarray:
        return posterior(self.log_nu + self.log_dens)[0]

    def params(self) -> ModelParams:
        return ModelParams(self.beta, self.pi)


Step = Callable[[_State, list], _State]


def _run(algorithm: str, dataset: Dataset, init: Initialization, cfg: EstimatorConfig,
         step: Step, diagnostics: dict | None = None) -> FitResult:
    start = time.perf_counter()
    state = _State.start(init.params, dataset)
    trace = [state.loglik]
    converged = False
    for t in range(1, cfg.max_iter + 1):
        try:
            state = step(state, trace)
        except EstimationError as err:
            err.add_context(algorithm, t, trace)
            raise
        if not np.all(np.isfinite(state.beta)):
            err = EstimationError("coefficients diverged to non-finite values")
            err.add_context(algorithm, t, trace)
            raise err
        trace.append(state.loglik)
        if trace[-1] - trace[-2] < cfg.tol:
            converged = True
            break
    return FitResult(
        algorithm=algorithm,
        params=state.params(),
        loglik_trace=np.asarray(trace),
        iterations=len(trace) - 1,
        converged=converged,
        decay_count=count_decays(trace, cfg.decay_slack),
        wall_time=time.perf_counter() - start,
        diagnostics=diagnostics if diagnostics is not None else {},
    )


def _profiles_step(state: _State, dataset: Dataset):
    """E-step and profile M-step common to all one-step methods."""
    sbar = state.sbar()
    pi = m_step_pi(sbar, dataset)
    return sbar, pi, log_item_densities(pi, dataset)


def _check_classes(n_classes: int) -> None:
    if n_classes < 1:
        raise DataError("need at least one class")


def _fit_single_class(algorithm, dataset, init, cfg) -> FitResult:
    # closed form: one profile update reaches the maximum
    def step(state, trace):
        _, pi, log_dens = _profiles_step(state, dataset)
        return _State(state.beta, pi, log_dens, state.log_nu)

    res = _run(algorithm, dataset, init, replace(cfg, max_iter=1), step)
    res.converged = True
    return res


def _nested_cycles(state: _State, pi, log_dens, dataset: Dataset, iteration: int,
                   on_cycle=None) -> _State:
    x = dataset.design
    beta = state.beta.copy()
    log_nu = state.log_nu
    for r in range(beta.shape[0]):
        sbar, _ = posterior(log_nu + log_dens)
        eta = linear_predictors(beta, x)
        offsets = row_logsumexp(np.delete(eta, r, axis=1))
        weights = pg_weights_for_cycle(beta[r], offsets, sbar[:, r], x)
        new_row = gls_update(x, weights, class_index=r)
        if on_cycle is not None:
            before = beta.copy()
            beta[r] = new_row
            on_cycle(CycleRecord(iteration, r, before, beta.copy(), sbar))
        else:
            beta[r] = new_row
        log_nu = log_class_probabilities(beta, x)
    return _State(beta, pi, log_dens, log_nu)


def _nested_step(dataset: Dataset, on_cycle=None) -> Step:
    def step(state, trace):
        _, pi, log_dens = _profiles_step(state, dataset)
        return _nested_cycles(state, pi, log_dens, dataset, len(trace), on_cycle)
    return step


def _newton_q1_step(dataset: Dataset, alpha: float) -> Step:
    x = dataset.design

    def step(state, trace):
        sbar, pi, log_dens = _profiles_step(state, dataset)
        nu = np.exp(state.log_nu)
        direction = _newton_direction(q1_hessian(nu, x), q1_score(sbar, nu, x))
        beta = state.beta + alpha * direction
        return _State(beta, pi, log_dens, log_class_probabilities(beta, x))
    return step


# -- public estimators -------------------------------------------------------


def fit_nested_em(dataset: Dataset, n_classes: int, init: Initialization,
                  cfg: EstimatorConfig = EstimatorConfig(), *, on_cycle=None) -> FitResult:
    """Nested EM. ``on_cycle`` receives a ``CycleRecord`` after every class update."""
    _check_classes(n_classes)
    _check_init(init, n_classes)
    if n_classes == 1:
        return _fit_single_class("nested_em", dataset, init, cfg)
    return _run("nested_em", dataset, init, cfg, _nested_step(dataset, on_cycle))


def fit_em_two_class(dataset: Dataset, init: Initialization,
                     cfg: EstimatorConfig = EstimatorConfig()) -> FitResult:
    """Exact Polya-gamma EM for two classes (offsets are identically zero)."""
    _check_init(init, 2)
    return _run("em_two_class", dataset, init, cfg, _nested_step(dataset))


def fit_hybrid_em(dataset: Dataset, n_classes: int, init: Initialization,
                  cfg: EstimatorConfig = EstimatorConfig()) -> FitResult:
    _check_classes(n_classes)
    _check_init(init, n_classes)
    if n_classes == 1:
        return _fit_single_class("hybrid_em", dataset, init, cfg)
    nested = _nested_step(dataset)
    newton = _newton_q1_step(dataset, cfg.alpha)
    diagnostics = {"switch_iteration": None}

    def step(state, trace):
        if diagnostics["switch_iteration"] is None and len(trace) > 1 \
                and trace[-1] - trace[-2] <= cfg.epsilon:
            diagnostics["switch_iteration"] = len(trace) - 1
        if diagnostics["switch_iteration"] is None:
            return nested(state, trace)
        return newton(state, trace)

    return _run("hybrid_em", dataset, init, cfg, step, diagnostics)


def fit_nr_em_q1(dataset: Dataset, n_classes: int, init: Initialization,
                 cfg: EstimatorConfig = EstimatorConfig()) -> FitResult:
    _check_classes(n_classes)
    _check_init(init, n_classes)
    if n_classes == 1:
        return _fit_single_class("nr_em_q1", dataset, init, cfg)
    return _run("nr_em_q1", dataset, init, cfg, _newton_q1_step(dataset, cfg.alpha))


def fit_nr_em(dataset: Dataset, n_classes: int, init: Initialization,
              cfg: EstimatorConfig = EstimatorConfig()) -> FitResult:
    _check_classes(n_classes)
    _check_init(init, n_classes)
    if n_classes == 1:
        return _fit_single_class("nr_em", dataset, init, cfg)
    x = dataset.design

    def step(state, trace):
        sbar, pi, log_dens = _profiles_step(state, dataset)
        nu = np.exp(state.log_nu)
        hessian = observed_hessian(sbar, nu, x)
        scale = float(np.abs(q1_hessian(nu, x)).max())
        direction = _newton_direction(hessian, q1_score(sbar, nu, x), scale)
        beta = state.beta + cfg.alpha * direction
        return _State(beta, pi, log_dens, log_class_probabilities(beta, x))

    return _run("nr_em", dataset, init, cfg, step)


def fit_mm_em(dataset: Dataset, n_classes: int, init: Initialization,
              cfg: EstimatorConfig = EstimatorConfig()) -> FitResult:
    _check_classes(n_classes)
    _check_init(init, n_classes)
    if n_classes == 1:
        return _fit_single_class("mm_em", dataset, init, cfg)
    x = dataset.design
    bound = bohning_bound(n_classes, x)
    if np.linalg.cond(bound) > MAX_CONDITION:
        raise SingularSystemError("curvature bound is singular; design is rank deficient")
    factor = cho_factor(bound)

    def step(state, trace):
        sbar, pi, log_dens = _profiles_step(state, dataset)
        score = q1_score(sbar, np.exp(state.log_nu), x)
        beta = state.beta + cho_solve(factor, score.ravel()).reshape(score.shape)
        return _State(beta, pi, log_dens, log_class_probabilities(beta, x))

    return _run("mm_em", dataset, init, cfg, step)


def _safe_log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x)


def _multinomial_logit(labels: np.ndarray, n_classes: int, design: np.ndarray,
                       cfg: EstimatorConfig) -> tuple[np.ndarray, int, bool]:
    """Newton-Raphson with step halving for a multinomial logit on hard labels."""
    target = np.eye(n_classes)[labels]
    beta = np.zeros((n_classes - 1, design.shape[1]))

    def objective(b):
        return float(np.sum(target * log_class_probabilities(b, design)))

    current = objective(beta)
    for it in range(1, cfg.max_iter + 1):
        nu = np.exp(log_class_probabilities(beta, design))
        direction = _newton_direction(q1_hessian(nu, design), q1_score(target, nu, design))
        step = 1.0
        while True:
            cand = beta + step * direction
            value = objective(cand)
            if value >= current or step < 1e-10:
                break
            step *= 0.5
        beta, increment, current = cand, value - current, value
        if increment < cfg.tol:
            return beta, it, True
    return beta, cfg.max_iter, False


def fit_three_step_classical(dataset: Dataset, n_classes: int, init: Initialization,
                             cfg: EstimatorConfig = EstimatorConfig()) -> FitResult:
    """Latent class model without covariates, modal assignment, then logit.

    The trace holds one entry: the full-model log-likelihood at the combined
    estimate. The first-stage EM trace is kept in ``diagnostics``.
    """
    _check_classes(n_classes)
    _check_init(init, n_classes)
    start = time.perf_counter()
    params0 = init.params
    params0.check_against(dataset)
    # step 1: EM with constant class weights
    weights = class_probabilities(params0, dataset).mean(axis=0)
    pi = params0.pi
    log_dens = log_item_densities(pi, dataset)
    stage1 = [float(np.sum(row_logsumexp(_safe_log(weights) + log_dens)))]
    converged1 = False
    for t in range(1, cfg.max_iter + 1):
        try:
            sbar, _ = posterior(_safe_log(weights) + log_dens)
            weights = sbar.mean(axis=0)
            pi = m_step_pi(sbar, dataset)
        except EstimationError as err:
            err.add_context("three_step", t, stage1)
            raise
        log_dens = log_item_densities(pi, dataset)
        stage1.append(float(np.sum(row_logsumexp(_safe_log(weights) + log_dens))))
        if stage1[-1] - stage1[-2] < cfg.tol:
            converged1 = True
            break
    # step 2: modal assignment; argmax breaks ties toward the lowest index
    sbar, _ = posterior(_safe_log(weights) + log_dens)
    labels = np.argmax(sbar, axis=1)
    top = sbar.max(axis=1, keepdims=True)
    ties = int(np.sum(np.sum(sbar == top, axis=1) > 1))
    sizes = np.bincount(labels, minlength=n_classes)
    if np.any(sizes == 0):
        err = EmptyClassError(int(np.argmin(sizes)), 0.0)
        err.add_context("three_step", len(stage1) - 1, stage1)
        raise err
    # step 3: multinomial logit of the modal classes on the covariates
    try:
        beta, logit_iters, converged3 = _multinomial_logit(labels, n_classes, dataset.design, cfg)
    except EstimationError as err:
        err.add_context("three_step", len(stage1) - 1, stage1)
        raise
    params = ModelParams(beta, pi)
    return FitResult(
        algorithm="three_step",
        params=params,
        loglik_trace=np.array([log_likelihood(params, dataset)]),
        iterations=len(stage1) - 1,
        converged=converged1 and converged3,
        decay_count=0,
        wall_time=time.perf_counter() - start,
        diagnostics={
            "stage1_trace": stage1,
            "class_weights": weights.tolist(),
            "modal_ties": ties,
            "logit_iterations": logit_iters,
        },
    )


def _check_init(init: Initialization, n_classes: int) -> None:
    if init.params.n_classes != n_classes:
        raise DataError(
            f"initialization has {init.params.n_classes} classes, expected {n_classes}"
        )


ESTIMATORS = {
    "nested_em": fit_nested_em,
    "hybrid_em": fit_hybrid_em,
    "nr_em": fit_nr_em,
    "nr_em_q1": fit_nr_em_q1,
    "mm_em": fit_mm_em,
    "three_step": fit_three_step_classical,
    "em_two_class": lambda dataset, n_classes, init, cfg: fit_em_two_class(dataset, init, cfg),
}


def parse_algorithm(name: str) -> tuple[str, float | None]:
    """Split ``"nr_em_q1@0.5"`` into the estimator id and an alpha override."""
    base, _, alpha = name.partition("@")
    if base not in ESTIMATORS:
        raise DataError(f"unknown algorithm {base!r}; choose from {', '.join(ESTIMATORS)}")
    if not alpha:
        return base, None
    try:
        return base, float(alpha)
    except ValueError:
        raise DataError(f"bad step size in {name!r}") from None


def fit(algorithm: str, dataset: Dataset, n_classes: int, init: Initialization,
        cfg: EstimatorConfig = EstimatorConfig()) -> FitResult:
    """Dispatch on a stable estimator identifier (optionally ``name@alpha``)."""
    base, alpha = parse_algorithm(algorithm)
    if alpha is not None:
        cfg = replace(cfg, alpha=alpha)
    result = ESTIMATORS[base](dataset, n_classes, init, cfg)
    result.algorithm = algorithm
    return result
