"""Residual sums, degrees of freedom and AIC/BIC for fused fits.

Kept apart from :mod:`subtransfer.tuning` so the estimator can attach these
quantities to every fit without a circular import.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg as sla

from .datamodel import FusedProblem, PenaltyKind, PenaltySpec
from .errors import DegenerateRSS, SingularExternalGram

# |gamma_e| above this counts as a detected shift
NONZERO_TOL = 1e-10


def residual_sums(problem: FusedProblem, beta, gamma) -> tuple[float, float]:
    """``(RSS_T, RSS_B*)`` for coefficients ``beta`` and shifts ``gamma``.

    ``RSS_B*`` is the residual of regressing ``y_B* - gamma`` on ``X_B*``;
    the projector itself is never formed.  A rank-deficient ``X_B*`` (fewer
    selected rows than columns, say) is handled by the minimum-norm solve.
    """
    X_T, y_T = problem.target.X, problem.target.y
    rt = y_T - X_T @ beta
    rss_t = float(rt @ rt)
    if problem.n_Bstar == 0:
        return rss_t, 0.0
    v = problem.y_B - np.asarray(gamma, dtype=float)
    coef, *_ = np.linalg.lstsq(problem.X_B, v, rcond=None)
    re = v - problem.X_B @ coef
    return rss_t, float(re @ re)


def l1_df(gamma) -> float:
    return float(np.count_nonzero(np.abs(np.asarray(gamma)) > NONZERO_TOL) + 1)


def l2_df(V_T, V_B, n_Bstar: int, lam: float) -> float:
    """Trace of the l2 fused hat matrix.

    Uses the eigenvalues ``q`` of the pencil ``V_T u = q V_B u`` (the same as
    those of ``V_T^{1/2} V_B^{-1} V_T^{1/2}``).
    """
    d = V_T.shape[0]
    # eigh does not reliably reject a singular V_B, so check its factor first
    try:
        diag = np.abs(np.diag(np.linalg.cholesky(V_B)))
    except np.linalg.LinAlgError:
        raise SingularExternalGram("weighted external Gram matrix is singular") from None
    if diag.min() <= np.sqrt(1e-13) * diag.max():
        raise SingularExternalGram("weighted external Gram matrix is numerically singular")
    try:
        q = sla.eigh(V_T, V_B, eigvals_only=True)
    except (np.linalg.LinAlgError, sla.LinAlgError, ValueError):
        raise SingularExternalGram("weighted external Gram matrix is singular") from None
    q = np.clip(q, 0.0, None)
    return float(n_Bstar / (1 + lam) + lam * d / (1 + lam) + np.sum(q / (lam + (1 + lam) * q)))


def l2_df_trace(V_T, V_B, n_Bstar: int, lam: float) -> float:
    """Same quantity as :func:`l2_df` written as
    ``(1-c) n + c d + (1-c) tr(V_lam^{-1} V_T)`` with ``c = lam/(1+lam)``.

    Valid when ``V_B`` is singular as long as ``V_T + c V_B`` is not.
    """
    d = V_T.shape[0]
    c = lam / (1 + lam)
    tr = np.trace(np.linalg.solve(V_T + c * V_B, V_T))
    return float((1 - c) * n_Bstar + c * d + (1 - c) * tr)


def fused_df(problem: FusedProblem, gamma, penalty: PenaltySpec) -> float:
    if penalty.kind is PenaltyKind.L1:
        return l1_df(gamma)
    X_T = problem.target.X
    V_T = X_T.T @ X_T
    X_B = problem.X_B
    V_B = X_B.T @ (problem.w[:, None] * X_B)
    try:
        return l2_df(V_T, V_B, problem.n_Bstar, penalty.lam)
    except SingularExternalGram:
        return l2_df_trace(V_T, V_B, problem.n_Bstar, penalty.lam)


def information_criteria(rss_target: float, rss_external: float, df: float,
                         n_S: int, n_Bstar: int, d: int) -> tuple[float, float]:
    """AIC and BIC on the pooled residual sum over ``m = n_S + n_B* - d`` rows."""
    rss = rss_target + rss_external
    m = n_S + n_Bstar - d
    if m <= 0 or not rss > 0:
        raise DegenerateRSS(f"RSS = {rss}, m = {m}")
    base = m * math.log(rss / m)
    return base + 2.0 * df, base + df * (math.log(m) + 1.0)
