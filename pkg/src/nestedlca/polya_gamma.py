"""Polya-gamma expectations and the weighted least-squares coefficient update.

For a logistic term in the linear predictor ``z``, the Polya-gamma latent
variable PG(1, z) has mean ``tanh(z/2) / (2 z)``. Replacing it by that mean
turns the logistic log-likelihood of one class (given the others, through the
offsets ``a_i``) into a weighted least-squares criterion

    Q*(b) = -0.5 * sum_i w_i (eta_i - x_i' b)^2

whose maximizer is a single GLS solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DomainError, ShapeError, SingularSystemError

TAYLOR_CUTOFF = 1e-4
OMEGA_FLOOR = 1e-12
MAX_CONDITION = 1e12


def pg_expectation(z):
    """Mean of a PG(1, z) variable, tanh(z/2) / (2z), with value 1/4 at z = 0.

    Accepts scalars or arrays. Near zero the series 1/4 - z^2/48 is used.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("pg_expectation needs finite arguments")
    small = np.abs(z) < TAYLOR_CUTOFF
    safe = np.where(small, 1.0, z)
    out = np.where(small, 0.25 - z * z / 48.0, np.tanh(0.5 * safe) / (2.0 * safe))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class PgWeights:
    """Per-unit quantities for one class update.

    omega_bar: expected Polya-gamma weights, in (0, 1/4]
    eta_bar: working responses for the weighted least-squares fit
    offsets: log of the summed exp-predictors of the other classes
    """

    omega_bar: np.ndarray
    eta_bar: np.ndarray
    offsets: np.ndarray


def pg_weights_for_cycle(beta_r, offsets, sbar_r, design) -> PgWeights:
    """Weights and working responses for updating one class's coefficients.

    ``beta_r`` is the current coefficient row, ``sbar_r`` the responsibilities
    of that class, ``offsets`` the a_i values. With all offsets zero this is
    the two-class update.
    """
    design = np.asarray(design, dtype=float)
    beta_r = np.asarray(beta_r, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    sbar_r = np.asarray(sbar_r, dtype=float)
    n = design.shape[0]
    if beta_r.shape != (design.shape[1],) or offsets.shape != (n,) or sbar_r.shape != (n,):
        raise ShapeError("beta_r, offsets and sbar_r do not match the design")
    omega = np.maximum(pg_expectation(design @ beta_r - offsets), OMEGA_FLOOR)
    eta = (sbar_r - 0.5 + omega * offsets) / omega
    return PgWeights(omega_bar=omega, eta_bar=eta, offsets=offsets)


def gls_update(design, weights: PgWeights, class_index: int | None = None) -> np.ndarray:
    """Solve (X' W X) b = X' W eta for the new coefficient row."""
    x = np.asarray(design, dtype=float)
    w = weights.omega_bar
    if w.shape != (x.shape[0],) or weights.eta_bar.shape != w.shape:
        raise ShapeError("weights do not match the design")
    xtw = x.T * w
    gram = xtw @ x
    rhs = xtw @ weights.eta_bar
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularSystemError(
            f"weighted normal equations ill-conditioned (condition {cond:.3g}); "
            "possible separation",
            class_index,
        )
    try:
        factor = cho_factor(gram)
    except LinAlgError as err:
        raise SingularSystemError(str(err), class_index) from None
    beta = cho_solve(factor, rhs)
    # one refinement step keeps the normal-equation residual near roundoff
    beta += cho_solve(factor, rhs - gram @ beta)
    return beta
