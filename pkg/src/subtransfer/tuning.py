"""Choosing lambda by AIC or BIC over a log-spaced grid."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .criteria import fused_df, information_criteria, residual_sums
from .datamodel import FitResult, FusedProblem, PenaltySpec
from .errors import NoConvergedFit
from .estimator import SolverSettings, _cholesky, fit_fused, weighted_gram

__all__ = [
    "Criterion",
    "TuningReport",
    "degrees_of_freedom",
    "information_criteria",
    "lambda_grid",
    "lambda_max",
    "rss_components",
    "select_lambda",
    "tune",
]


class Criterion(enum.Enum):
    AIC = "aic"
    BIC = "bic"

    @classmethod
    def parse(cls, value) -> "Criterion":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower())


@dataclass(frozen=True)
class TuningReport:
    grid: np.ndarray
    df: np.ndarray
    rss_target: np.ndarray
    rss_external: np.ndarray
    aic: np.ndarray
    bic: np.ndarray
    converged: np.ndarray
    chosen_index_aic: int
    chosen_index_bic: int

    def rows(self):
        for i, lam in enumerate(self.grid):
            yield {
                "lambda": float(lam),
                "df": float(self.df[i]),
                "rss_target": float(self.rss_target[i]),
                "rss_external": float(self.rss_external[i]),
                "aic": float(self.aic[i]),
                "bic": float(self.bic[i]),
                "converged": bool(self.converged[i]),
            }


def rss_components(problem: FusedProblem, fit: FitResult) -> tuple[float, float]:
    return residual_sums(problem, fit.beta, fit.gamma)


def degrees_of_freedom(problem: FusedProblem, fit: FitResult) -> float:
    return fused_df(problem, fit.gamma, fit.penalty)


def pooled_fit(problem: FusedProblem) -> np.ndarray:
    """Weighted least squares on target rows plus selected external rows."""
    X_T, y_T = problem.target.X, problem.target.y
    X_B, y_B, w = problem.X_B, problem.y_B, problem.w
    V = weighted_gram(X_T) + weighted_gram(X_B, w)
    cho = _cholesky(V)
    return sla.cho_solve(cho, X_T.T @ y_T + X_B.T @ (w * y_B), check_finite=False)


def lambda_max(problem: FusedProblem) -> float:
    """Smallest lambda at which the l1 fit has no nonzero shift.

    With every shift at zero the fit is the pooled weighted least-squares
    fit, and that is a fixed point exactly when each unweighted residual is
    within the threshold.  A relative margin of 1e-12 absorbs the rounding
    of the first fixed-point step.
    """
    if problem.n_Bstar == 0:
        return 1.0
    beta = pooled_fit(problem)
    lm = float(np.max(np.abs(problem.y_B - problem.X_B @ beta)))
    return lm * (1.0 + 1e-12) if lm > 0 else 1.0


def lambda_grid(problem: FusedProblem, size: int, span: float = 1e4,
                lam_max: float | None = None) -> np.ndarray:
    """``size`` log-spaced values from ``lam_max`` down to ``lam_max / span``."""
    if size < 2:
        raise ValueError("grid size must be at least 2")
    top = lambda_max(problem) if lam_max is None else float(lam_max)
    return np.geomspace(top, top / span, size)


def _crit_values(fits, criterion: Criterion):
    return np.array([getattr(f, criterion.value) for f in fits])


def _choose(values: np.ndarray, converged: np.ndarray) -> int:
    ok = converged & np.isfinite(values)
    if not ok.any():
        return -1
    masked = np.where(ok, values, np.inf)
    # argmin returns the first minimum, i.e. the larger lambda on a descending grid
    return int(np.argmin(masked))


def select_lambda(problem: FusedProblem, grid, criterion="bic",
                  settings: SolverSettings | None = None, warm_start: bool = True
                  ) -> tuple[FitResult, TuningReport]:
    """Fit every lambda on ``grid`` (in order) and keep the criterion minimiser.

    Shifts are warm-started from the previous grid point unless
    ``warm_start`` is False.  Ties go to the earlier (larger) lambda.
    """
    criterion = Criterion.parse(criterion)
    settings = settings or SolverSettings()
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    fits: list[FitResult] = []
    gamma = settings.gamma_init
    for lam in grid:
        pen = PenaltySpec(problem.penalty.kind, lam)
        fit = fit_fused(problem, replace(settings, gamma_init=gamma), penalty=pen)
        fits.append(fit)
        if warm_start:
            gamma = fit.gamma
    conv = np.array([f.converged for f in fits])
    aic = _crit_values(fits, Criterion.AIC)
    bic = _crit_values(fits, Criterion.BIC)
    i_aic, i_bic = _choose(aic, conv), _choose(bic, conv)
    report = TuningReport(
        grid=grid,
        df=np.array([f.df for f in fits]),
        rss_target=np.array([f.rss_target for f in fits]),
        rss_external=np.array([f.rss_external for f in fits]),
        aic=aic,
        bic=bic,
        converged=conv,
        chosen_index_aic=i_aic,
        chosen_index_bic=i_bic,
    )
    chosen = i_aic if criterion is Criterion.AIC else i_bic
    if chosen < 0:
        raise NoConvergedFit(f"no converged fit with finite {criterion.value} on the grid")
    return fits[chosen], report


def tune(problem: FusedProblem, criterion="bic", grid_size: int = 20,
         settings: SolverSettings | None = None, span: float = 1e4):
    """Default grid followed by :func:`select_lambda`.

    BIC is the default because AIC's penalty of 2 per shift is smaller than
    the drop in ``m log(RSS/m)`` from absorbing a residual once |B*| is large
    relative to n_S; AIC then tends to the bottom of the grid even on clean
    data.
    """
    if problem.n_Bstar == 0:
        grid = np.array([1.0])
    else:
        grid = lambda_grid(problem, grid_size, span)
    return select_lambda(problem, grid, criterion, settings)
