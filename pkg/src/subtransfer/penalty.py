"""Thresholding, robust loss and score functions for the l1 and l2 shift penalties.

With ``P(g) = 2|g|^nu / nu`` the per-row shift solves
``argmin_g (z - g)^2 + lam * P(g)``, which is ``theta``.  Profiling the
shift out leaves the robust loss ``huber_h`` whose half-derivative is ``psi``.

All functions accept scalars or arrays and broadcast.
"""

from __future__ import annotations

import numpy as np

from .datamodel import PenaltyKind, PenaltySpec


def _kind_lam(penalty: PenaltySpec):
    return penalty.kind, penalty.lam


def theta(z, penalty: PenaltySpec):
    """Soft thresholding (l1) or proportional shrinkage (l2).

    For l1 the closed band ``|z| <= lam`` maps to exactly 0.
    """
    kind, lam = _kind_lam(penalty)
    z = np.asarray(z, dtype=float)
    if kind is PenaltyKind.L1:
        out = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
    else:
        out = z / (1.0 + lam)
    return out[()] if out.ndim == 0 else out


def psi(z, penalty: PenaltySpec):
    """Score ``z - theta(z)``: clipping at +-lam for l1, ``lam z / (1 + lam)`` for l2."""
    kind, lam = _kind_lam(penalty)
    z = np.asarray(z, dtype=float)
    if kind is PenaltyKind.L1:
        out = np.clip(z, -lam, lam)
    else:
        out = lam * z / (1.0 + lam)
    return out[()] if out.ndim == 0 else out


def huber_h(z, penalty: PenaltySpec):
    """Profiled loss: Huber's loss for l1, scaled square for l2."""
    kind, lam = _kind_lam(penalty)
    z = np.asarray(z, dtype=float)
    if kind is PenaltyKind.L1:
        a = np.abs(z)
        out = np.where(a <= lam, z * z, 2.0 * lam * a - lam * lam)
    else:
        out = lam * z * z / (1.0 + lam)
    return out[()] if out.ndim == 0 else out


def penalty_value(gamma, penalty: PenaltySpec):
    """``P(gamma) = 2|gamma|^nu / nu`` elementwise (without the lam factor)."""
    g = np.abs(np.asarray(gamma, dtype=float))
    if penalty.kind is PenaltyKind.L1:
        return 2.0 * g
    return g * g
