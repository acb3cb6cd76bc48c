"""Solvers for the fused mean-shift problem.

The shifts are found by the fixed-point map

    gamma <- theta(y_B - X_B beta(gamma)),
    beta(gamma) = V^{-1} X_T^T y_T + V^{-1} X_B^T W (y_B - gamma),

with ``V = X_T^T X_T + X_B^T W X_B``.  Written with the weighted hat matrices
``H^w = W^{1/2} X_B V^{-1} X_B^T W^{1/2}`` and ``H^w_{B,T} = W^{1/2} X_B V^{-1} X_T^T``
this is the same update as ``theta(W^{-1/2} z)`` with
``z = (I - H^w) W^{1/2} y_B + H^w W^{1/2} gamma - H^w_{B,T} y_T``.  The form
above touches the data only through products with ``X_B`` and solves with a
cached Cholesky factor of ``V``, so no |B*| x |B*| matrix is ever built.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import criteria
from .datamodel import (
    FitResult,
    FusedProblem,
    PenaltyKind,
    PenaltySpec,
    RegressionDataset,
    SubsampleSelection,
    assemble_problem,
)
from .errors import DegenerateRSS, DimensionMismatch, SingularCombiner, SingularFusedGram, SingularGram
from .penalty import penalty_value, psi

log = logging.getLogger(__name__)

# reciprocal condition number below which a Gram matrix is treated as singular
_RCOND = 1e-13


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-8
    max_iter: int = 1000
    gamma_init: np.ndarray | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


def _cholesky(V: np.ndarray, exc=SingularFusedGram, what="fused Gram matrix"):
    try:
        c = sla.cho_factor(V, lower=True, check_finite=False)
    except sla.LinAlgError:
        raise exc(f"{what} is not positive definite") from None
    diag = np.abs(np.diag(c[0]))
    if diag.min() <= np.sqrt(_RCOND) * diag.max():
        raise exc(f"{what} is numerically singular")
    return c


def weighted_gram(X, w=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if w is None:
        return X.T @ X
    return X.T @ (np.asarray(w, dtype=float)[:, None] * X)


def fit_ols(data: RegressionDataset) -> np.ndarray:
    """Ordinary least squares by an SVD-based solve."""
    X, y = data.X, data.y
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise SingularGram(f"design has rank {rank} < {X.shape[1]}")
    return beta


def predict(beta, X) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != beta.shape[0]:
        raise DimensionMismatch(f"X has shape {X.shape}, beta has length {beta.shape[0]}")
    return X @ beta


def objective(problem: FusedProblem, beta, gamma, penalty: PenaltySpec | None = None) -> float:
    """Value of the penalised fused least-squares objective."""
    pen = penalty or problem.penalty
    rt = problem.target.y - problem.target.X @ beta
    re = problem.y_B - problem.X_B @ beta - gamma
    w = problem.w
    return float(rt @ rt + w @ (re * re) + pen.lam * (w @ penalty_value(gamma, pen)))


def robust_objective(problem: FusedProblem, beta, penalty: PenaltySpec | None = None) -> float:
    """Profiled objective in ``beta`` alone (least squares on target, robust loss on B*)."""
    from .penalty import huber_h

    pen = penalty or problem.penalty
    rt = problem.target.y - problem.target.X @ beta
    re = problem.y_B - problem.X_B @ beta
    return float(rt @ rt + problem.w @ huber_h(re, pen))


def kkt_residual(problem: FusedProblem, beta, penalty: PenaltySpec | None = None) -> float:
    """Sup-norm of the stationarity condition of the profiled objective."""
    pen = penalty or problem.penalty
    X_T, y_T = problem.target.X, problem.target.y
    g = X_T.T @ (y_T - X_T @ beta)
    if problem.n_Bstar:
        g = g + problem.X_B.T @ (problem.w * psi(problem.y_B - problem.X_B @ beta, pen))
    return float(np.max(np.abs(g)))


def kkt_bound(problem: FusedProblem, tol: float) -> float:
    scale = max(1.0, float(np.max(np.abs(problem.target.X.T @ problem.target.y))))
    return 100.0 * tol * scale


def _finish(problem: FusedProblem, beta, gamma, iterations, converged, penalty, diagnostics):
    rss_t, rss_e = criteria.residual_sums(problem, beta, gamma)
    df = criteria.fused_df(problem, gamma, penalty)
    try:
        aic, bic = criteria.information_criteria(rss_t, rss_e, df, problem.n_S, problem.n_Bstar,
                                                 problem.d)
    except DegenerateRSS:
        aic = bic = float("nan")
    return FitResult(
        beta=beta,
        gamma=gamma,
        iterations=iterations,
        converged=converged,
        penalty=penalty,
        df=df,
        rss_target=rss_t,
        rss_external=rss_e,
        aic=aic,
        bic=bic,
        kkt_residual=kkt_residual(problem, beta, penalty),
        diagnostics=diagnostics,
    )


def fit_fused(problem: FusedProblem, settings: SolverSettings | None = None, *,
              penalty: PenaltySpec | None = None, track_objective: bool = False) -> FitResult:
    """Fit ``(beta, gamma)`` by iterating the thresholded fixed-point map.

    Convergence is declared when successive shift vectors differ by less than
    ``settings.tol`` in sup-norm.  A fit that exhausts ``max_iter`` is still
    returned, with ``converged=False``.

    ``penalty`` overrides ``problem.penalty`` (used when sweeping lambda).
    With ``track_objective`` the full objective after every iteration is
    stored in ``diagnostics["objective"]``.
    """
    settings = settings or SolverSettings()
    pen = penalty or problem.penalty
    X_T, y_T = problem.target.X, problem.target.y
    X_B, y_B, w = problem.X_B, problem.y_B, problem.w
    n_B, d = X_B.shape

    XtW = (X_B * w[:, None]).T
    V = X_T.T @ X_T + XtW @ X_B
    cho = _cholesky(V)
    a = sla.cho_solve(cho, X_T.T @ y_T, check_finite=False)
    # V^{-1} X_B^T W, so each step is two products with an n x d array
    M = sla.cho_solve(cho, XtW, check_finite=False)
    b0 = a + M @ y_B

    def beta_of(g):
        return b0 - M @ g

    if settings.gamma_init is None:
        gamma = np.zeros(n_B)
    else:
        gamma = np.array(settings.gamma_init, dtype=float)
        if gamma.shape != (n_B,):
            raise DimensionMismatch(f"gamma_init has shape {gamma.shape}, expected ({n_B},)")

    if pen.kind is PenaltyKind.L1:
        lam = pen.lam

        def thresh(z):
            return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
    else:
        shrink = 1.0 / (1.0 + pen.lam)

        def thresh(z):
            return z * shrink

    trace = [] if track_objective else None
    converged = n_B == 0
    k = 0
    while not converged and k < settings.max_iter:
        beta = beta_of(gamma)
        if trace is not None:
            trace.append(objective(problem, beta, gamma, pen))
        new = thresh(y_B - X_B @ beta)
        step = float(np.max(np.abs(new - gamma)))
        gamma = new
        k += 1
        converged = step < settings.tol
    beta = beta_of(gamma)
    if trace is not None:
        trace.append(objective(problem, beta, gamma, pen))
    if not converged:
        log.debug("fixed-point iteration stopped after %d steps without converging (lambda=%g)",
                  k, pen.lam)

    # arrays held during the solve: X_B^T W and V^{-1} X_B^T W (d x n each),
    # V and its factor (d x d), O(n) working vectors
    diagnostics = {"aux_elements": XtW.size + M.size + 2 * V.size + 4 * n_B + 3 * d,
                   "hat_matrix_materialized": False}
    if trace is not None:
        diagnostics["objective"] = trace
    return _finish(problem, beta, gamma, k, converged, pen, diagnostics)


def fit_fused_l2(problem: FusedProblem, lam: float | None = None) -> FitResult:
    """Closed-form l2 fit: ``beta = (V_T + c V_B)^{-1}(X_T^T y_T + c X_B^T W y_B)``
    with ``c = lam / (1 + lam)``, then ``gamma = (y_B - X_B beta) / (1 + lam)``."""
    lam = problem.penalty.lam if lam is None else float(lam)
    pen = PenaltySpec(PenaltyKind.L2, lam)
    X_T, y_T = problem.target.X, problem.target.y
    X_B, y_B, w = problem.X_B, problem.y_B, problem.w
    c = lam / (1.0 + lam)
    XtW = (X_B * w[:, None]).T
    V_lam = X_T.T @ X_T + c * (XtW @ X_B)
    cho = _cholesky(V_lam)
    beta = sla.cho_solve(cho, X_T.T @ y_T + c * (XtW @ y_B), check_finite=False)
    gamma = (y_B - X_B @ beta) / (1.0 + lam)
    return _finish(problem, beta, gamma, 0, True, pen, {"closed_form": True})


def combine_estimators(beta_rs, beta_tg, V_T, V_Brs, V_Btg) -> np.ndarray:
    """Precision-weighted average of two fused estimates.

    ``(2 V_T + V_rs + V_tg)^{-1} {(V_T + V_rs) beta_rs + (V_T + V_tg) beta_tg}``.
    ``beta_rs``/``beta_tg`` may be FitResults or coefficient vectors.
    """
    b1 = np.asarray(getattr(beta_rs, "beta", beta_rs), dtype=float)
    b2 = np.asarray(getattr(beta_tg, "beta", beta_tg), dtype=float)
    A1 = np.asarray(V_T) + np.asarray(V_Brs)
    A2 = np.asarray(V_T) + np.asarray(V_Btg)
    cho = _cholesky(A1 + A2, SingularCombiner, "combining matrix")
    return sla.cho_solve(cho, A1 @ b1 + A2 @ b2, check_finite=False)


def fit_data_combined(target: RegressionDataset, external: RegressionDataset,
                      union_selection: SubsampleSelection, penalty: PenaltySpec,
                      settings: SolverSettings | None = None) -> FitResult:
    problem = assemble_problem(target, external, union_selection, penalty)
    return fit_fused(problem, settings)
