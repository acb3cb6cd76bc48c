"""Ways of choosing the external subsample B*.

Random schemes build inclusion probabilities and draw a Poisson sample;
target-guided selection keeps the rows best explained by the target-only fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .datamodel import RegressionDataset, SubsampleSelection
from .errors import DimensionMismatch, RateOutOfRange, SingularGram, ValidationError


@dataclass(frozen=True, eq=False)
class SamplingProbabilities:
    """Inclusion probabilities ``pi`` summing to the nominal size ``r``.

    ``scores`` holds the unnormalised importance scores the probabilities
    were built from (leverage norms, OSMAC scores, ...), when there are any.
    """

    pi: np.ndarray
    nominal_size: float
    scores: np.ndarray | None = None
    threshold: float = math.inf
    n_capped: int = 0
    fallback_uniform: bool = False

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).ravel()
        pi.flags.writeable = False
        object.__setattr__(self, "pi", pi)
        r = float(self.nominal_size)
        if not np.all(np.isfinite(pi)) or np.any(pi < 0) or np.any(pi > 1):
            raise ValidationError("sampling probabilities must lie in [0, 1]")
        if abs(pi.sum() - r) > 1e-8 * max(pi.size, 1):
            raise ValidationError(f"probabilities sum to {pi.sum()!r}, expected {r!r}")

    @property
    def n_B(self) -> int:
        return self.pi.size

    @property
    def rate(self) -> float:
        return self.nominal_size / self.n_B


def _check_size(r: float, n_B: int) -> float:
    r = float(r)
    if not (0 < r <= n_B):
        raise RateOutOfRange(f"subsample size {r} outside (0, {n_B}]")
    return r


def poisson_sample(probs: SamplingProbabilities, rng: np.random.Generator) -> SubsampleSelection:
    """Include row e independently when ``u_e <= pi_e``; weight it ``rho / pi_e``."""
    u = rng.random(probs.n_B)
    idx = np.flatnonzero((u <= probs.pi) & (probs.pi > 0))
    rho = probs.rate
    return SubsampleSelection(idx, rho / probs.pi[idx], probs.nominal_size, rho)


def uniform_probabilities(n_B: int, r: float) -> SamplingProbabilities:
    r = _check_size(r, n_B)
    return SamplingProbabilities(np.full(n_B, r / n_B), r)


def leverage_norms(X_B) -> np.ndarray:
    """Square roots of leverage scores, ``||(X^T X)^{-1/2} x_e||``.

    Uses the Cholesky factor ``L`` of the Gram matrix: ``t_e = ||L^{-1} x_e||``.
    """
    X = np.asarray(X_B, dtype=float)
    try:
        L = np.linalg.cholesky(X.T @ X)
    except np.linalg.LinAlgError:
        raise SingularGram("external Gram matrix is not positive definite") from None
    Z = sla.solve_triangular(L, X.T, lower=True)
    return np.sqrt(np.einsum("ij,ij->j", Z, Z))


def water_fill(scores, r: float) -> tuple[np.ndarray, float, int]:
    """Probabilities ``pi_e = min(1, (r - g) s_e / S)`` summing to ``r``.

    ``g`` is the number of saturated rows and ``S`` the sum of the ``n - g``
    smallest scores.  Returns ``(pi, H, g)`` where ``H = r S / (r - g)`` is
    the cap applied to ``r * s_e`` before normalisation.  This minimises
    ``sum s_e^2 / pi_e`` subject to ``sum pi = r`` and ``0 <= pi <= 1``.
    """
    s = np.asarray(scores, dtype=float)
    n = s.size
    r = _check_size(r, n)
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise ValidationError("scores must be finite and nonnegative")
    if r >= n:
        return np.ones(n), math.inf, n
    n_pos = int(np.count_nonzero(s))
    if n_pos < r:
        raise RateOutOfRange(f"only {n_pos} rows have positive score, cannot reach size {r}")
    desc = np.sort(s)[::-1]
    total = math.fsum(desc)
    top = np.concatenate(([0.0], np.cumsum(desc)))
    g_max = min(n - 1, math.ceil(r) - 1)
    g = 0
    # smallest g whose (g+1)-th largest score fits under the cap once the top
    # g are saturated; g_max always qualifies because r - g_max <= 1
    for g in range(g_max + 1):
        rest = total - top[g]
        if (r - g) * desc[g] <= rest:
            break
    rest = total - top[g]
    pi = np.minimum(1.0, (r - g) * s / rest)
    H = r * rest / (r - g)
    return pi, H, g


def optimal_probabilities(X_B, r: float) -> SamplingProbabilities:
    """Leverage-based probabilities proportional to ``t_e`` capped at one."""
    X = np.asarray(X_B, dtype=float)
    r = _check_size(r, X.shape[0])
    t = leverage_norms(X)
    pi, H, g = water_fill(t, r)
    return SamplingProbabilities(pi, r, scores=t, threshold=H, n_capped=g)


def osmac_probabilities(X_B, y_B, beta_pilot, r: float) -> SamplingProbabilities:
    """OSMAC-style probabilities proportional to ``|y_e - x_e^T beta| * t_e``.

    If every residual is exactly zero the scores carry no information and the
    result falls back to uniform probabilities with ``fallback_uniform`` set.
    """
    X = np.asarray(X_B, dtype=float)
    y = np.asarray(y_B, dtype=float)
    b = np.asarray(beta_pilot, dtype=float)
    if y.shape != (X.shape[0],) or b.shape != (X.shape[1],):
        raise DimensionMismatch("X_B, y_B and beta_pilot have incompatible shapes")
    r = _check_size(r, X.shape[0])
    t = leverage_norms(X)
    scores = np.abs(y - X @ b) * t
    if not np.any(scores > 0):
        return SamplingProbabilities(np.full(X.shape[0], r / X.shape[0]), r, scores=scores,
                                     fallback_uniform=True)
    pi, H, g = water_fill(scores, r)
    return SamplingProbabilities(pi, r, scores=scores, threshold=H, n_capped=g)


def target_guided_select(external: RegressionDataset, beta_T, r: int) -> SubsampleSelection:
    """The ``r`` external rows with the smallest ``|y_e - x_e^T beta_T|``.

    Ties go to the lower row index (stable sort).
    """
    r_int = int(r)
    if r_int != r or not (1 <= r_int <= external.n):
        raise RateOutOfRange(f"target-guided size {r} outside [1, {external.n}]")
    res = np.abs(external.y - external.X @ np.asarray(beta_T, dtype=float))
    order = np.argsort(res, kind="stable")[:r_int]
    return SubsampleSelection.unit(order, external.n)


def combined_select(
    external: RegressionDataset,
    beta_T,
    probs: SamplingProbabilities | None,
    r_total: float,
    c: float,
    rng: np.random.Generator,
) -> SubsampleSelection:
    """Union of a target-guided part of size ``ceil(c r_total)`` and a Poisson draw.

    ``probs`` must have nominal size ``(1 - c) r_total`` (ignored when c == 1).
    Rows picked by both parts keep the target-guided weight 1.
    """
    if not (0.0 <= c <= 1.0):
        raise ValidationError(f"combining fraction {c} outside [0, 1]")
    r_tg = math.ceil(c * r_total - 1e-9) if c > 0 else 0
    if c < 1:
        if probs is None:
            raise ValidationError("probabilities required when c < 1")
        if not math.isclose(probs.nominal_size, (1 - c) * r_total, rel_tol=1e-9):
            raise ValidationError(
                f"probabilities built for size {probs.nominal_size}, expected {(1 - c) * r_total}"
            )
        rs = poisson_sample(probs, rng)
    if r_tg == 0:
        return rs
    tg = target_guided_select(external, beta_T, r_tg)
    if c >= 1:
        return tg
    return merge_selections(tg, rs, external.n, r_total)


def merge_selections(tg: SubsampleSelection | None, rs: SubsampleSelection | None,
                     n_B: int, r_total: float) -> SubsampleSelection:
    """Union of a target-guided and a Poisson selection.

    Rows in both keep weight 1 from the target-guided part; the remaining
    Poisson rows keep their inverse-probability weights.
    """
    if tg is None or rs is None:
        return tg if rs is None else rs
    idx = np.union1d(tg.indices, rs.indices)
    w = np.ones(idx.size)
    from_rs = ~np.isin(idx, tg.indices)
    pos = np.searchsorted(rs.indices, idx[from_rs])
    w[from_rs] = rs.weights[pos]
    return SubsampleSelection(idx, w, float(r_total), min(1.0, r_total / n_B))
