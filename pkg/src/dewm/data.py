"""Panel data containers, history extraction, demeaning and CSV ingestion.

A panel holds, for each of ``n`` individuals and ``T`` stages, a binary
treatment ``d_t``, a real outcome ``y_t`` and a covariate vector ``x_t`` of
stage-specific dimension ``k_t`` (``k_t`` may be zero).

The history available before the stage-``t`` decision is flattened in a fixed
canonical order::

    (d_1, ..., d_{t-1}, y_1, ..., y_{t-1}, x_1, ..., x_t)

so that ``H_1 == x_1`` and every linear rule indexes features by position in
this vector.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "PanelLoadError",
    "Trajectory",
    "HistoryVector",
    "PanelDataset",
    "history",
    "history_labels",
    "history_length",
    "load_panel",
    "write_panel",
    "demean_outcomes",
]

_HEADER_RE = re.compile(r"^(?:(d|y)(\d+)|x(\d+)_(\d+))$")


class PanelLoadError(ValueError):
    """Raised when a panel CSV is malformed.

    ``row`` is the 1-based data row (header excluded) and ``column`` the
    offending header name, when known.
    """

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        super().__init__(message)


def history_length(t: int, covariate_dims: Sequence[int]) -> int:
    """Length of the flattened stage-``t`` history (``t`` is 1-based)."""
    return 2 * (t - 1) + int(sum(covariate_dims[:t]))


def history_labels(t: int, covariate_dims: Sequence[int]) -> list[str]:
    """Column names of the stage-``t`` history vector, in canonical order."""
    labels = [f"d{s}" for s in range(1, t)]
    labels += [f"y{s}" for s in range(1, t)]
    for s in range(1, t + 1):
        labels += [f"x{s}_{j}" for j in range(1, covariate_dims[s - 1] + 1)]
    return labels


@dataclass(frozen=True)
class Trajectory:
    """One individual's observed path ``(d_t, x_t, y_t)`` for ``t = 1..T``."""

    id: str
    treatments: np.ndarray
    outcomes: np.ndarray
    covariates: tuple

    @property
    def stage_count(self) -> int:
        return len(self.treatments)


@dataclass(frozen=True)
class HistoryVector:
    """Flat stage-``t`` history of one individual, in canonical order."""

    stage: int
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, key):
        return self.values[key]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def history(traj: Trajectory, t: int) -> HistoryVector:
    """Flat history vector ``H_t`` of a single trajectory."""
    T = traj.stage_count
    if not 1 <= t <= T:
        raise IndexError(f"stage {t} out of range 1..{T}")
    parts = [
        np.asarray(traj.treatments[: t - 1], dtype=float),
        np.asarray(traj.outcomes[: t - 1], dtype=float),
    ]
    parts += [np.asarray(traj.covariates[s], dtype=float) for s in range(t)]
    return HistoryVector(t, _readonly(np.concatenate(parts)))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class PanelDataset:
    """An immutable i.i.d. sample of trajectories stored column-wise.

    Parameters
    ----------
    treatments : array of shape (n, T)
        Binary treatments.
    outcomes : array of shape (n, T)
        Real outcomes.
    covariates : sequence of T arrays, each of shape (n, k_t)
        Stage covariates; ``k_t`` may be 0.
    ids : sequence of str, optional
        Individual identifiers; defaults to ``"0".."n-1"``.
    outcome_bounds : sequence of float, optional
        ``M_t``; when given, every ``|y_t|`` must be at most ``M_t / 2``.
    """

    def __init__(
        self,
        treatments,
        outcomes,
        covariates,
        ids: Optional[Sequence[str]] = None,
        outcome_bounds: Optional[Sequence[float]] = None,
        outcome_means: Optional[Sequence[float]] = None,
        demeaned: bool = False,
    ):
        D = np.asarray(treatments)
        Y = np.asarray(outcomes, dtype=float)
        if D.ndim != 2 or Y.shape != D.shape:
            raise ValueError("treatments and outcomes must be (n, T) arrays of equal shape")
        n, T = D.shape
        if n == 0 or T == 0:
            raise ValueError("panel must contain at least one trajectory and one stage")
        if not np.all((D == 0) | (D == 1)):
            raise ValueError("treatments must be 0 or 1")
        if not np.all(np.isfinite(Y)):
            raise ValueError("outcomes must be finite")
        if len(covariates) != T:
            raise ValueError(f"expected {T} covariate blocks, got {len(covariates)}")
        X = []
        for t, block in enumerate(covariates, start=1):
            b = np.asarray(block, dtype=float)
            if b.ndim == 1:
                b = b.reshape(n, -1) if b.size else np.zeros((n, 0))
            if b.shape[0] != n:
                raise ValueError(f"covariate block {t} has {b.shape[0]} rows, expected {n}")
            X.append(_readonly(b))
        if outcome_bounds is not None:
            M = np.asarray(outcome_bounds, dtype=float)
            if M.shape != (T,):
                raise ValueError("outcome_bounds must have one entry per stage")
            bad = np.argwhere(np.abs(Y) > M / 2)
            if len(bad):
                i, t = bad[0]
                raise ValueError(
                    f"outcome y{t + 1} = {Y[i, t]} at row {i + 1} outside [-M/2, M/2] with M = {M[t]}"
                )
            self.outcome_bounds = _readonly(M)
        else:
            self.outcome_bounds = None
        self.treatments = _readonly(D.astype(np.int8))
        self.outcomes = _readonly(Y)
        self.covariates = tuple(X)
        self.ids = tuple(str(i) for i in ids) if ids is not None else tuple(str(i) for i in range(n))
        if len(self.ids) != n:
            raise ValueError("ids length does not match number of rows")
        self.outcome_means = None if outcome_means is None else _readonly(np.asarray(outcome_means, float))
        self.demeaned = bool(demeaned)
        self._hist_cache: dict[int, np.ndarray] = {}

    # basic shape -------------------------------------------------------
    @property
    def n(self) -> int:
        return self.treatments.shape[0]

    @property
    def stage_count(self) -> int:
        return self.treatments.shape[1]

    @property
    def covariate_dims(self) -> tuple[int, ...]:
        return tuple(b.shape[1] for b in self.covariates)

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return (
            f"PanelDataset(n={self.n}, T={self.stage_count}, k={list(self.covariate_dims)}, "
            f"demeaned={self.demeaned})"
        )

    # trajectories --------------------------------------------------------
    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            id=self.ids[i],
            treatments=self.treatments[i],
            outcomes=self.outcomes[i],
            covariates=tuple(b[i] for b in self.covariates),
        )

    def __iter__(self) -> Iterator[Trajectory]:
        for i in range(self.n):
            yield self.trajectory(i)

    # histories -------------------------------------------------------------
    def history_matrix(self, t: int) -> np.ndarray:
        """Stacked stage-``t`` histories, shape ``(n, history_length(t))``."""
        T = self.stage_count
        if not 1 <= t <= T:
            raise IndexError(f"stage {t} out of range 1..{T}")
        H = self._hist_cache.get(t)
        if H is None:
            blocks = [
                self.treatments[:, : t - 1].astype(float),
                self.outcomes[:, : t - 1],
                *self.covariates[:t],
            ]
            H = np.ascontiguousarray(np.concatenate(blocks, axis=1))
            H.setflags(write=False)
            self._hist_cache[t] = H
        return H

    def history_labels(self, t: int) -> list[str]:
        return history_labels(t, self.covariate_dims)

    # derived datasets ----------------------------------------------------
    def with_outcomes(self, outcomes) -> "PanelDataset":
        """Copy with outcomes replaced; demeaning state is reset."""
        return PanelDataset(
            self.treatments, outcomes, self.covariates, ids=self.ids, outcome_bounds=None
        )

    def subset(self, rows) -> "PanelDataset":
        rows = np.asarray(rows)
        return PanelDataset(
            self.treatments[rows],
            self.outcomes[rows],
            [b[rows] for b in self.covariates],
            ids=[self.ids[i] for i in np.arange(self.n)[rows]],
            outcome_bounds=self.outcome_bounds,
            outcome_means=self.outcome_means,
            demeaned=self.demeaned,
        )

    def equals(self, other: "PanelDataset") -> bool:
        """Bit-for-bit equality of the numeric payload and ids."""
        return (
            self.ids == other.ids
            and np.array_equal(self.treatments, other.treatments)
            and np.array_equal(self.outcomes, other.outcomes)
            and len(self.covariates) == len(other.covariates)
            and all(np.array_equal(a, b) for a, b in zip(self.covariates, other.covariates))
        )


def demean_outcomes(ds: PanelDataset) -> PanelDataset:
    """Subtract the per-stage sample mean from every outcome.

    The resulting dataset records the removed means in ``outcome_means`` and is
    flagged ``demeaned``; demeaning twice is an error.
    """
    if ds.demeaned:
        raise ValueError("dataset is already demeaned")
    means = ds.outcomes.mean(axis=0)
    return PanelDataset(
        ds.treatments,
        ds.outcomes - means,
        ds.covariates,
        ids=ds.ids,
        outcome_means=means,
        demeaned=True,
    )


# CSV ------------------------------------------------------------------------


def _parse_header(header: list[str]):
    if not header or header[0].strip() != "id":
        raise PanelLoadError("first column must be 'id'", row=0, column=header[0] if header else None)
    d_cols, y_cols, x_cols = {}, {}, {}
    for j, name in enumerate(header[1:], start=1):
        m = _HEADER_RE.match(name.strip())
        if m is None:
            raise PanelLoadError(f"unrecognised column '{name}'", row=0, column=name)
        if m.group(1):
            target = d_cols if m.group(1) == "d" else y_cols
            t = int(m.group(2))
            if t in target:
                raise PanelLoadError(f"duplicate column '{name}'", row=0, column=name)
            target[t] = j
        else:
            key = (int(m.group(3)), int(m.group(4)))
            if key in x_cols:
                raise PanelLoadError(f"duplicate column '{name}'", row=0, column=name)
            x_cols[key] = j
    if not d_cols:
        raise PanelLoadError("no treatment columns d1..dT in header", row=0)
    T = max(d_cols)
    for t in range(1, T + 1):
        for kind, cols in (("d", d_cols), ("y", y_cols)):
            if t not in cols:
                raise PanelLoadError(f"missing column '{kind}{t}'", row=0, column=f"{kind}{t}")
    if max(y_cols) > T:
        raise PanelLoadError(f"outcome column y{max(y_cols)} beyond last stage {T}", row=0)
    dims = []
    for t in range(1, T + 1):
        js = sorted(j for (s, j) in x_cols if s == t)
        if js != list(range(1, len(js) + 1)):
            raise PanelLoadError(f"covariate columns for stage {t} must be x{t}_1..x{t}_k", row=0)
        dims.append(len(js))
    if any(s > T for (s, _) in x_cols):
        raise PanelLoadError("covariate column beyond last stage", row=0)
    return T, dims, d_cols, y_cols, x_cols


def load_panel(path, outcome_bounds: Optional[Sequence[float]] = None) -> PanelDataset:
    """Read a panel from CSV with header ``id,d1,y1,x1_1,...``.

    Raises
    ------
    PanelLoadError
        On an empty file, unknown or missing columns, ragged rows, a
        non-numeric cell, or a treatment outside ``{0, 1}``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise PanelLoadError(f"empty file: {path}")
    header = rows[0]
    T, dims, d_cols, y_cols, x_cols = _parse_header(header)
    body = rows[1:]
    if not body:
        raise PanelLoadError(f"no data rows in {path}", row=1)
    n = len(body)
    D = np.zeros((n, T), dtype=np.int8)
    Y = np.zeros((n, T))
    X = [np.zeros((n, k)) for k in dims]
    ids = []
    width = len(header)

    def number(cell: str, i: int, col: str) -> float:
        try:
            v = float(cell)
        except ValueError:
            raise PanelLoadError(
                f"malformed numeric cell '{cell}' at row {i}, column {col}", row=i, column=col
            ) from None
        if not np.isfinite(v):
            raise PanelLoadError(f"non-finite value at row {i}, column {col}", row=i, column=col)
        return v

    for r, row in enumerate(body):
        i = r + 1
        if len(row) != width:
            raise PanelLoadError(f"ragged row {i}: {len(row)} cells, expected {width}", row=i)
        if any(c.strip() == "" for c in row):
            col = header[[c.strip() for c in row].index("")]
            raise PanelLoadError(f"missing value at row {i}, column {col}", row=i, column=col)
        ids.append(row[0].strip())
        for t, j in d_cols.items():
            v = number(row[j], i, header[j])
            if v not in (0.0, 1.0):
                raise PanelLoadError(
                    f"treatment out of domain at row {i} (column {header[j]} = {row[j]})",
                    row=i,
                    column=header[j],
                )
            D[r, t - 1] = int(v)
        for t, j in y_cols.items():
            Y[r, t - 1] = number(row[j], i, header[j])
        for (t, k), j in x_cols.items():
            X[t - 1][r, k - 1] = number(row[j], i, header[j])
    return PanelDataset(D, Y, X, ids=ids, outcome_bounds=outcome_bounds)


def write_panel(ds: PanelDataset, path) -> None:
    """Write ``ds`` in the CSV schema read by :func:`load_panel`.

    Floats are written with ``repr`` so a reload is bit-identical.
    """
    header = ["id"]
    for t in range(1, ds.stage_count + 1):
        header += [f"d{t}", f"y{t}"] + [f"x{t}_{j}" for j in range(1, ds.covariate_dims[t - 1] + 1)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [ds.ids[i]]
            for t in range(ds.stage_count):
                row += [str(int(ds.treatments[i, t])), repr(float(ds.outcomes[i, t]))]
                row += [repr(float(v)) for v in ds.covariates[t][i]]
            w.writerow(row)
