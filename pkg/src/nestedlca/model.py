"""Latent class regression model: data containers and likelihood computations.

Unit ``i`` has ``J`` categorical responses ``y_i`` and a covariate row ``x_i``.
Class membership follows a multinomial logit with the last class as the
reference (its coefficients are pinned at zero and never stored), and
responses are conditionally independent categoricals given the class::

    pr(y_i | x_i) = sum_r nu_r(x_i) prod_j pi_jr(y_ij)

All products over items are accumulated as sums of logs. Response codes are
0-based inside this module; ``Dataset.from_codes`` is the 1-based entry point.
Class labels are 0-based in the Python API and 1-based in error messages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DataError, DegenerateUnitError, ShapeError

SIMPLEX_ATOL = 1e-12


@dataclass(frozen=True, eq=False)
class Dataset:
    """Responses (0-based codes), category counts and design matrix.

    The intercept, if wanted, must be a column of ``design``.
    """

    responses: np.ndarray
    category_counts: tuple[int, ...]
    design: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.responses)
        x = np.asarray(self.design, dtype=float)
        if y.ndim != 2 or x.ndim != 2:
            raise ShapeError("responses and design must be 2-d")
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise DataError("responses must be integer codes")
        y = y.astype(np.int64)
        n, n_items = y.shape
        if n < 1 or n_items < 1 or x.shape[1] < 1:
            raise ShapeError("need n >= 1, J >= 1 and P >= 1")
        if x.shape[0] != n:
            raise ShapeError(f"design has {x.shape[0]} rows, responses have {n}")
        counts = tuple(int(k) for k in self.category_counts)
        if len(counts) != n_items:
            raise ShapeError(f"{len(counts)} category counts for {n_items} items")
        if min(counts) < 2:
            raise DataError("every item needs at least 2 categories")
        bad = (y < 0) | (y >= np.asarray(counts))
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DataError(
                f"row {i + 1}, column {j + 1}: response code {y[i, j] + 1} "
                f"outside 1..{counts[j]}"
            )
        if not np.all(np.isfinite(x)):
            i, j = np.argwhere(~np.isfinite(x))[0]
            raise DataError(f"row {i + 1}, design column {j + 1}: non-finite value")
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "category_counts", counts)

    @classmethod
    def from_codes(cls, codes, category_counts: Sequence[int], design) -> Dataset:
        """Build from 1-based response codes, as they appear in data files."""
        return cls(np.asarray(codes) - 1, tuple(category_counts), design)

    @property
    def n_units(self) -> int:
        return self.responses.shape[0]

    @property
    def n_items(self) -> int:
        return self.responses.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.design.shape[1]

    @cached_property
    def item_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.category_counts)])

    @cached_property
    def indicators(self) -> np.ndarray:
        """One-hot response matrix of shape (n, sum_j K_j)."""
        out = np.zeros((self.n_units, int(self.item_offsets[-1])))
        cols = self.responses + self.item_offsets[:-1]
        out[np.arange(self.n_units)[:, None], cols] = 1.0
        return out


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Coefficients of the first R-1 classes and per-item response profiles.

    ``pi[j]`` has shape (R, K_j); row ``r`` is the distribution of item ``j``
    within class ``r``.
    """

    beta: np.ndarray
    pi: tuple[np.ndarray, ...]
    n_classes: int = field(init=False)

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float, ndmin=2)
        if beta.ndim != 2:
            raise ShapeError("beta must be 2-d (R-1, P)")
        if not np.all(np.isfinite(beta)):
            raise DataError("beta has non-finite entries")
        n_classes = beta.shape[0] + 1
        pi = tuple(np.array(p, dtype=float) for p in self.pi)
        for j, p in enumerate(pi):
            if p.ndim != 2 or p.shape[0] != n_classes:
                raise ShapeError(
                    f"item {j + 1}: profile shape {p.shape}, expected ({n_classes}, K)"
                )
            if np.any(p < 0) or np.any(p > 1):
                raise DataError(f"item {j + 1}: probabilities outside [0, 1]")
            err = np.abs(p.sum(axis=1) - 1.0)
            if np.any(err > SIMPLEX_ATOL):
                r = int(np.argmax(err))
                raise DataError(
                    f"item {j + 1}, class {r + 1}: probabilities sum to "
                    f"{p[r].sum():.15g}, not 1"
                )
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "n_classes", n_classes)

    @property
    def category_counts(self) -> tuple[int, ...]:
        return tuple(p.shape[1] for p in self.pi)

    def check_against(self, dataset: Dataset) -> None:
        if self.beta.shape[1] != dataset.n_covariates:
            raise ShapeError(
                f"beta has {self.beta.shape[1]} columns, design has "
                f"{dataset.n_covariates}"
            )
        if self.category_counts != dataset.category_counts:
            raise ShapeError(
                f"profiles have categories {self.category_counts}, data has "
                f"{dataset.category_counts}"
            )


# -- array-level helpers shared with the estimators -------------------------


def row_logsumexp(a: np.ndarray) -> np.ndarray:
    """log(sum(exp(a), axis=1)) with max-shifting; all -inf rows give -inf.

    Hand-rolled because scipy's generic version dominates the EM loop cost.
    """
    m = a.max(axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(a - m[:, None]).sum(axis=1)) + m


def linear_predictors(beta: np.ndarray, design: np.ndarray) -> np.ndarray:
    """(n, R) matrix of x_i' beta_r with a trailing zero column."""
    eta = np.zeros((design.shape[0], beta.shape[0] + 1))
    eta[:, :-1] = design @ beta.T
    return eta


def log_class_probabilities(beta: np.ndarray, design: np.ndarray) -> np.ndarray:
    eta = linear_predictors(beta, design)
    return eta - row_logsumexp(eta)[:, None]


def log_pi(pi: Sequence[np.ndarray]) -> list[np.ndarray]:
    with np.errstate(divide="ignore"):
        return [np.log(p) for p in pi]


def log_item_densities(pi: Sequence[np.ndarray], dataset: Dataset) -> np.ndarray:
    """(n, R) matrix of sum_j log pi_jr(y_ij); -inf where a factor is zero."""
    y = dataset.responses
    out = np.zeros((dataset.n_units, pi[0].shape[0]))
    for j, lp in enumerate(log_pi(pi)):
        out += lp[:, y[:, j]].T
    return out


def posterior(log_joint: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalize rows of a log-joint matrix.

    Returns the responsibilities and the per-unit log marginal. Raises
    ``DegenerateUnitError`` when a row is entirely -inf.
    """
    lse = row_logsumexp(log_joint)
    dead = ~np.isfinite(lse)
    if dead.any():
        raise DegenerateUnitError(int(np.argmax(dead)))
    return np.exp(log_joint - lse[:, None]), lse


# -- public operations -------------------------------------------------------


def _check_beta(beta: np.ndarray, dataset: Dataset) -> None:
    if beta.ndim != 2 or beta.shape[1] != dataset.n_covariates:
        raise ShapeError(
            f"beta shape {beta.shape} does not match {dataset.n_covariates} covariates"
        )


def class_probabilities(params: ModelParams, dataset: Dataset) -> np.ndarray:
    """Covariate-dependent class probabilities nu_r(x_i), shape (n, R)."""
    _check_beta(params.beta, dataset)
    return np.exp(log_class_probabilities(params.beta, dataset.design))


def log_likelihood(params: ModelParams, dataset: Dataset) -> float:
    """Observed-data log-likelihood. Returns -inf if some unit has zero density."""
    params.check_against(dataset)
    log_joint = log_class_probabilities(params.beta, dataset.design)
    log_joint = log_joint + log_item_densities(params.pi, dataset)
    return float(np.sum(row_logsumexp(log_joint)))


def responsibilities(params: ModelParams, dataset: Dataset) -> np.ndarray:
    """Posterior class membership probabilities, shape (n, R); rows sum to 1."""
    params.check_against(dataset)
    log_joint = log_class_probabilities(params.beta, dataset.design)
    sbar, _ = posterior(log_joint + log_item_densities(params.pi, dataset))
    return sbar


def complete_loglik(params: ModelParams, dataset: Dataset, labels) -> float:
    """Complete-data log-likelihood for known 0-based class labels."""
    params.check_against(dataset)
    s = np.asarray(labels)
    if s.shape != (dataset.n_units,):
        raise ShapeError(f"need {dataset.n_units} labels, got shape {s.shape}")
    if np.any(s < 0) or np.any(s >= params.n_classes):
        bad = int(np.argmax((s < 0) | (s >= params.n_classes)))
        raise DataError(
            f"unit {bad + 1}: class label {s[bad] + 1} outside 1..{params.n_classes}"
        )
    rows = np.arange(dataset.n_units)
    log_nu = log_class_probabilities(params.beta, dataset.design)
    ll1 = log_nu[rows, s].sum()
    ll2 = log_item_densities(params.pi, dataset)[rows, s].sum()
    return float(ll1 + ll2)


def expected_loglik_q1(beta: np.ndarray, sbar: np.ndarray, dataset: Dataset) -> float:
    """sum_i sum_r sbar_ir log nu_r(x_i): the class-membership part of the
    expected complete log-likelihood."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    _check_beta(beta, dataset)
    sbar = np.asarray(sbar, dtype=float)
    if sbar.shape != (dataset.n_units, beta.shape[0] + 1):
        raise ShapeError(f"responsibilities shape {sbar.shape} does not match beta")
    return float(np.sum(sbar * log_class_probabilities(beta, dataset.design)))
