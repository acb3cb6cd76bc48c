"""Reading and writing the package's numeric CSV dialect.

Comma separated, '.' decimal point, a header row, UTF-8, no quoting.  Floats
are written with 17 significant digits so every double round-trips.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .datamodel import RegressionDataset
from .errors import CsvParseError
from .sampling import SamplingProbabilities


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and float matrix of a numeric CSV file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CsvParseError(f"cannot read {path}: {exc.strerror}") from None
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise CsvParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise CsvParseError(f"{path}: no data rows")
    out = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise CsvParseError(f"{path}, line {line}: {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise CsvParseError(f"{path}, line {line}: cannot parse {cell!r} as a number") from None
            if not math.isfinite(v):
                raise CsvParseError(f"{path}, line {line}: non-finite value {cell!r}")
            out[i, j] = v
    return header, out


def read_dataset(path, intercept: bool = True) -> tuple[RegressionDataset, list[str]]:
    """Dataset whose response is the last column.

    With ``intercept`` a column of ones is prepended to the covariates.
    Returns the dataset and the coefficient names.
    """
    header, table = read_table(path)
    if table.shape[1] < 2:
        raise CsvParseError(f"{path}: need at least one covariate and a response column")
    X, y = table[:, :-1], table[:, -1]
    names = list(header[:-1])
    if intercept:
        X = np.column_stack((np.ones(X.shape[0]), X))
        names = ["(intercept)"] + names
    return RegressionDataset(X, y), names


def write_table(header, rows, dest=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if dest is not None:
        Path(dest).write_text(text, encoding="utf-8")
    return text


def write_probabilities(probs: SamplingProbabilities, dest=None) -> str:
    scores = probs.scores if probs.scores is not None else np.ones(probs.n_B)
    rows = zip(range(probs.n_B), scores, probs.pi)
    return write_table(("index", "score", "pi"), rows, dest)


def read_probabilities(path, nominal_size: float | None = None) -> SamplingProbabilities:
    """Probabilities written by :func:`write_probabilities`.

    Without ``nominal_size`` the sum of the column is used, which matches the
    original size to rounding.
    """
    header, table = read_table(path)
    if header[-1] != "pi":
        raise CsvParseError(f"{path}: last column must be 'pi'")
    pi = table[:, -1]
    order = table[:, 0].astype(int)
    if not np.array_equal(order, np.arange(pi.size)):
        raise CsvParseError(f"{path}: index column must be 0, 1, ..., n-1")
    r = math.fsum(pi) if nominal_size is None else float(nominal_size)
    return SamplingProbabilities(pi, r, scores=table[:, 1])
