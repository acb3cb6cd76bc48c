"""Marginal covariate screening with false-discovery-rate control."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import EmptyInput, ValidationError


@dataclass(frozen=True)
class ScreeningResult:
    t_stat: np.ndarray
    p_value: np.ndarray
    selected: np.ndarray
    q: float

    @property
    def selected_indices(self) -> np.ndarray:
        return np.flatnonzero(self.selected)


def marginal_t_tests(Z, y) -> tuple[np.ndarray, np.ndarray]:
    """Slope t-statistics and two-sided p-values of ``y ~ 1 + z_j`` for each column.

    A column with zero variance gets ``t = 0`` and ``p = 1``.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    if Z.ndim != 2 or Z.shape[0] != n:
        raise ValidationError(f"covariates have shape {Z.shape}, response length {n}")
    if n <= 2:
        raise EmptyInput(f"screening needs more than 2 rows, got {n}")
    zc = Z - Z.mean(axis=0)
    yc = y - y.mean()
    sxx = np.einsum("ij,ij->j", zc, zc)
    syy = float(yc @ yc)
    sxy = zc.T @ yc
    dof = n - 2
    t = np.zeros(Z.shape[1])
    p = np.ones(Z.shape[1])
    scale = np.maximum(np.abs(Z).max(axis=0), 1.0)
    ok = sxx > (1e-12 * scale) ** 2 * n
    if syy > 0:
        r2 = np.clip(sxy[ok] ** 2 / (sxx[ok] * syy), 0.0, 1.0)
        with np.errstate(divide="ignore"):
            t_ok = np.sign(sxy[ok]) * np.sqrt(dof * r2 / (1.0 - r2))
        t[ok] = t_ok
        p[ok] = 2.0 * stats.t.sf(np.abs(t_ok), dof)
    return t, p


def benjamini_hochberg(p, q: float) -> np.ndarray:
    """Step-up selection: reject the ``k`` smallest p-values, with ``k`` the
    largest index such that ``p_(k) <= k q / m``."""
    p = np.asarray(p, dtype=float)
    if not 0 < q < 1:
        raise ValidationError(f"FDR level must lie in (0, 1), got {q}")
    m = p.size
    sel = np.zeros(m, dtype=bool)
    if m == 0:
        return sel
    order = np.argsort(p, kind="stable")
    below = p[order] <= q * np.arange(1, m + 1) / m
    if below.any():
        k = int(np.flatnonzero(below)[-1]) + 1
        sel[order[:k]] = True
    return sel


def screen(Z, y, q: float = 0.1) -> ScreeningResult:
    t, p = marginal_t_tests(Z, y)
    return ScreeningResult(t, p, benjamini_hochberg(p, q), float(q))
