"""Immutable containers for target data, external data and subsample selections.

All arrays stored on these objects are marked read-only so instances can be
shared between workers without copying.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    ColumnCountMismatch,
    DimensionMismatch,
    IndexOutOfRange,
    NonFiniteEntry,
    UnderdeterminedProblem,
    ValidationError,
)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


def _first_nonfinite(a: np.ndarray):
    bad = np.argwhere(~np.isfinite(a))
    return tuple(int(i) for i in bad[0]) if bad.size else None


@dataclass(frozen=True, eq=False)
class RegressionDataset:
    """Design matrix ``X`` (n x d) and response ``y`` (length n).

    An intercept, when wanted, is an explicit all-ones column of ``X``.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=float).ravel()))
        validate_dataset(self)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, indices) -> "RegressionDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return RegressionDataset(self.X[idx], self.y[idx])


def validate_dataset(data: RegressionDataset) -> None:
    """Raise if ``data`` breaks a dataset invariant, otherwise return None."""
    X, y = np.asarray(data.X), np.asarray(data.y)
    if X.ndim != 2 or y.ndim != 1:
        raise DimensionMismatch(f"expected 2-d X and 1-d y, got {X.ndim}-d and {y.ndim}-d")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[0]} rows but y has length {y.shape[0]}")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise DimensionMismatch(f"empty design of shape {X.shape}")
    pos = _first_nonfinite(X)
    if pos is not None:
        raise NonFiniteEntry("X", pos)
    pos = _first_nonfinite(y)
    if pos is not None:
        raise NonFiniteEntry("y", pos)


@dataclass(frozen=True, eq=False)
class SubsampleSelection:
    """Selected external rows with their fusion weights.

    ``indices`` are 0-based and strictly increasing. ``nominal_size`` is the
    requested size r (a real number for Poisson sampling) and ``rate`` is
    r / n_B.
    """

    indices: np.ndarray
    weights: np.ndarray
    nominal_size: float
    rate: float

    def __post_init__(self):
        idx = _frozen(np.asarray(self.indices).ravel(), dtype=np.intp)
        w = _frozen(np.asarray(self.weights, dtype=float).ravel())
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)
        if idx.shape != w.shape:
            raise DimensionMismatch(f"{idx.size} indices but {w.size} weights")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValidationError("selection indices must be strictly increasing")
        if idx.size and idx[0] < 0:
            raise IndexOutOfRange(f"negative index {idx[0]}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValidationError("selection weights must be finite and positive")
        if not (0 < self.rate <= 1):
            raise ValidationError(f"rate {self.rate} outside (0, 1]")

    def __len__(self) -> int:
        return self.indices.size

    @classmethod
    def unit(cls, indices, n_B: int, nominal_size: float | None = None) -> "SubsampleSelection":
        """Selection with all weights equal to one (deterministic inclusion)."""
        idx = np.sort(np.asarray(indices, dtype=np.intp))
        r = float(idx.size if nominal_size is None else nominal_size)
        return cls(idx, np.ones(idx.size), r, r / n_B)


class PenaltyKind(enum.Enum):
    L1 = 1
    L2 = 2

    @classmethod
    def parse(cls, value) -> "PenaltyKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper()
        if key in ("1", "2"):
            key = "L" + key
        try:
            return cls[key]
        except KeyError:
            raise ValidationError(f"unknown penalty kind {value!r}") from None


@dataclass(frozen=True)
class PenaltySpec:
    kind: PenaltyKind
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind.parse(self.kind))
        lam = float(self.lam)
        if not np.isfinite(lam) or lam < 0:
            raise ValidationError(f"lambda must be finite and >= 0, got {self.lam}")
        object.__setattr__(self, "lam", lam)

    @property
    def nu(self) -> int:
        return self.kind.value

    def with_lambda(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(self.kind, lam)


@dataclass(frozen=True, eq=False)
class FusedProblem:
    """Target data plus a weighted subsample of external rows.

    External rows are held by reference through ``selection.indices``; the
    ``X_B``/``y_B`` properties gather the selected rows once and cache them.
    """

    target: RegressionDataset
    external: RegressionDataset
    selection: SubsampleSelection
    penalty: PenaltySpec

    @cached_property
    def X_B(self) -> np.ndarray:
        out = self.external.X[self.selection.indices]
        out.flags.writeable = False
        return out

    @cached_property
    def y_B(self) -> np.ndarray:
        out = self.external.y[self.selection.indices]
        out.flags.writeable = False
        return out

    @property
    def w(self) -> np.ndarray:
        return self.selection.weights

    @property
    def n_S(self) -> int:
        return self.target.n

    @property
    def n_Bstar(self) -> int:
        return len(self.selection)

    @property
    def d(self) -> int:
        return self.target.d

    def with_penalty(self, penalty: PenaltySpec) -> "FusedProblem":
        new = FusedProblem(self.target, self.external, self.selection, penalty)
        # share gathered rows
        for name in ("X_B", "y_B"):
            if name in self.__dict__:
                new.__dict__[name] = self.__dict__[name]
        return new


def assemble_problem(
    target: RegressionDataset,
    external: RegressionDataset,
    selection: SubsampleSelection,
    penalty: PenaltySpec,
) -> FusedProblem:
    """Check compatibility of the pieces and bundle them into a FusedProblem.

    No external rows are copied here; the gather of the |B*| selected rows
    happens lazily on first access to ``X_B``/``y_B``.
    """
    validate_dataset(target)
    validate_dataset(external)
    if target.d != external.d:
        raise ColumnCountMismatch(f"target has {target.d} columns, external has {external.d}")
    idx = selection.indices
    if idx.size and (idx[0] < 0 or idx[-1] >= external.n):
        bad = idx[-1] if idx[-1] >= external.n else idx[0]
        raise IndexOutOfRange(f"selected index {bad} outside [0, {external.n})")
    if target.n + idx.size <= target.d:
        raise UnderdeterminedProblem(
            f"n_S + |B*| = {target.n + idx.size} <= d = {target.d}"
        )
    return FusedProblem(target, external, selection, penalty)


@dataclass(frozen=True, eq=False)
class FitResult:
    beta: np.ndarray
    gamma: np.ndarray
    iterations: int
    converged: bool
    penalty: PenaltySpec
    df: float = float("nan")
    rss_target: float = float("nan")
    rss_external: float = float("nan")
    aic: float = float("nan")
    bic: float = float("nan")
    kkt_residual: float = float("nan")
    diagnostics: dict = field(default_factory=dict)
