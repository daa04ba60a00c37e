"""Dataset ingestion: CSV and LIBSVM files to regression objectives.

CSV: comma separated, optional header auto-detected, last column is the
label. LIBSVM: "<label> <index>:<value> ..." with 1-based sparse indices,
densified. Features are standardized to zero mean and unit variance
(constant columns become zero); labels are remapped to {-1, +1} for the
logistic loss.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .objectives import RegressionObjective


class IngestError(ValueError):
    """Malformed or empty input file."""


def standardize(features: np.ndarray) -> np.ndarray:
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    out = features - mean
    keep = std > 1e-12
    out[:, keep] /= std[keep]
    out[:, ~keep] = 0.0
    return out


def _parse_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or all(not tok.strip() for tok in row):
                continue
            try:
                values = [float(tok) for tok in row]
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header row
                raise IngestError(f"{path}:{lineno}: non-numeric value in {row!r}")
            if rows and len(values) != len(rows[0]):
                raise IngestError(
                    f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise IngestError(f"{path}: no data rows")
    if len(rows[0]) < 2:
        raise IngestError(f"{path}: need at least one feature column and a label")
    mat = np.asarray(rows, dtype=float)
    return mat[:, :-1], mat[:, -1]


def _parse_libsvm(path: Path) -> tuple[np.ndarray, np.ndarray]:
    labels = []
    entries = []  # per row: list of (0-based index, value)
    max_index = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                labels.append(float(tokens[0]))
            except ValueError:
                raise IngestError(f"{path}:{lineno}: bad label {tokens[0]!r}")
            row = []
            for token in tokens[1:]:
                try:
                    idx_str, val_str = token.split(":", 1)
                    idx = int(idx_str)
                    val = float(val_str)
                except ValueError:
                    raise IngestError(f"{path}:{lineno}: bad feature token {token!r}")
                if idx < 1:
                    raise IngestError(f"{path}:{lineno}: indices are 1-based, got {idx}")
                row.append((idx - 1, val))
                max_index = max(max_index, idx)
            entries.append(row)
    if not entries:
        raise IngestError(f"{path}: no data rows")
    features = np.zeros((len(entries), max_index))
    for i, row in enumerate(entries):
        for j, val in row:
            features[i, j] = val
    return features, np.asarray(labels, dtype=float)


def ingest(path, fmt: str = "csv", loss: str = "square",
           tau: float = 0.0) -> RegressionObjective:
    """Load a dataset file into a regression objective."""
    path = Path(path)
    if not path.exists():
        raise IngestError(f"{path}: no such file")
    if fmt == "csv":
        features, labels = _parse_csv(path)
    elif fmt == "libsvm":
        features, labels = _parse_libsvm(path)
    else:
        raise IngestError(f"unknown format {fmt!r} (expected csv or libsvm)")
    return RegressionObjective(standardize(features), labels, loss=loss, tau=tau)


def emit_csv(obj: RegressionObjective, path) -> None:
    """Write an objective's (features, labels) back out as headerless CSV."""
    mat = np.hstack([obj.A, obj.b[:, None]])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in mat:
            writer.writerow([repr(float(v)) for v in row])
