"""Tabular causal data model, CSV ingestion and deterministic splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateSplit,
    InvalidPropensity,
    MissingColumn,
    NonBinaryTreatment,
    NonFiniteValue,
    ShapeMismatch,
)

__all__ = [
    "CausalFrame",
    "Schema",
    "Split",
    "Standardization",
    "load_csv",
    "write_csv",
    "make_split",
    "standardize",
    "fit_standardization",
    "DEFAULT_FRACTIONS",
]

DEFAULT_FRACTIONS = (0.6, 0.2, 0.2)


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _first_bad(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0])


@dataclass(frozen=True, eq=False)
class CausalFrame:
    """Immutable dataset of covariates, binary treatment and outcome.

    Optional columns are an instrument (binary) and a known propensity in
    ``(0, 1)``. Arrays are copied and made read-only on construction.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    instrument: np.ndarray | None = None
    propensity: np.ndarray | None = None
    column_names: tuple[str, ...] = ()
    treatment_col: str = "T"
    outcome_col: str = "Y"
    instrument_col: str = "Z"
    propensity_col: str = "p"

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ShapeMismatch(f"covariates must be a non-empty N x d matrix, got shape {X.shape}")
        n, d = X.shape
        names = tuple(self.column_names) or tuple(f"X{k}" for k in range(d))
        if len(names) != d:
            raise ShapeMismatch(f"{len(names)} column names for {d} covariates")

        def vec(values, name, dtype=float):
            v = np.asarray(values, dtype=float).reshape(-1)
            if v.shape[0] != n:
                raise ShapeMismatch(f"column {name!r} has length {v.shape[0]}, expected {n}")
            bad = ~np.isfinite(v)
            if bad.any():
                raise NonFiniteValue(name, _first_bad(bad))
            return v

        bad = ~np.isfinite(X)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise NonFiniteValue(names[c], int(r))
        T = vec(self.treatment, self.treatment_col)
        nonbin = (T != 0) & (T != 1)
        if nonbin.any():
            raise NonBinaryTreatment(self.treatment_col, _first_bad(nonbin))
        Y = vec(self.outcome, self.outcome_col)
        Z = None
        if self.instrument is not None:
            Z = vec(self.instrument, self.instrument_col)
            nonbin = (Z != 0) & (Z != 1)
            if nonbin.any():
                raise NonBinaryTreatment(self.instrument_col, _first_bad(nonbin))
        P = None
        if self.propensity is not None:
            P = vec(self.propensity, self.propensity_col)
            out = (P <= 0) | (P >= 1)
            if out.any():
                raise InvalidPropensity(self.propensity_col, _first_bad(out), "must lie in (0, 1)")

        set_ = object.__setattr__
        set_(self, "covariates", _frozen(X))
        set_(self, "treatment", _frozen(T, np.int64))
        set_(self, "outcome", _frozen(Y))
        set_(self, "instrument", None if Z is None else _frozen(Z, np.int64))
        set_(self, "propensity", None if P is None else _frozen(P))
        set_(self, "column_names", names)

    @property
    def n_rows(self) -> int:
        return self.covariates.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def __len__(self) -> int:
        return self.n_rows

    def with_outcome(self, outcome) -> "CausalFrame":
        return replace(self, outcome=outcome)

    def with_covariates(self, covariates) -> "CausalFrame":
        return replace(self, covariates=covariates)

    def without_propensity(self) -> "CausalFrame":
        return replace(self, propensity=None)

    def subset(self, idx) -> "CausalFrame":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            covariates=self.covariates[idx],
            treatment=self.treatment[idx],
            outcome=self.outcome[idx],
            instrument=None if self.instrument is None else self.instrument[idx],
            propensity=None if self.propensity is None else self.propensity[idx],
        )


@dataclass(frozen=True)
class Schema:
    """Maps CSV column names to roles.

    ``covariates=None`` means every column not assigned another role.
    """

    treatment: str = "T"
    outcome: str = "Y"
    instrument: str | None = None
    propensity: str | None = None
    covariates: tuple[str, ...] | None = None


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        reader = csv.reader(lines)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn("<header>", None, "empty file") from None
        rows = [r for r in reader if r]
    return [h.strip() for h in header], rows


def _parse_column(rows: list[list[str]], j: int, name: str) -> np.ndarray:
    out = np.empty(len(rows))
    for i, row in enumerate(rows):
        raw = row[j].strip() if j < len(row) else ""
        try:
            val = float(raw)
        except ValueError:
            raise NonFiniteValue(name, i, f"cannot parse {raw!r}") from None
        if not math.isfinite(val):
            raise NonFiniteValue(name, i)
        out[i] = val
    return out


def load_csv(path, schema: Schema = Schema()) -> CausalFrame:
    """Load a CSV file into a validated :class:`CausalFrame`.

    Lines starting with ``#`` before or between rows are skipped, which lets
    files written by :func:`write_csv` carry a provenance comment.

    Raises:
        MissingColumn: a referenced column is absent from the header.
        NonBinaryTreatment: treatment or instrument holds a value other than 0/1.
        NonFiniteValue: a referenced cell is empty, unparseable or non-finite.
    """
    header, rows = _read_rows(Path(path))
    pos = {name: j for j, name in enumerate(header)}
    roles = [schema.treatment, schema.outcome, schema.instrument, schema.propensity]
    for name in roles:
        if name is not None and name not in pos:
            raise MissingColumn(name)
    if schema.covariates is None:
        taken = {r for r in roles if r is not None}
        cov_names = tuple(h for h in header if h not in taken)
    else:
        cov_names = tuple(schema.covariates)
        for name in cov_names:
            if name not in pos:
                raise MissingColumn(name)
    if not cov_names:
        raise MissingColumn("<covariates>", None, "no covariate columns")

    def col(name):
        return _parse_column(rows, pos[name], name)

    X = np.column_stack([col(c) for c in cov_names]) if rows else np.empty((0, len(cov_names)))
    return CausalFrame(
        covariates=X,
        treatment=col(schema.treatment),
        outcome=col(schema.outcome),
        instrument=None if schema.instrument is None else col(schema.instrument),
        propensity=None if schema.propensity is None else col(schema.propensity),
        column_names=cov_names,
        treatment_col=schema.treatment,
        outcome_col=schema.outcome,
        instrument_col=schema.instrument or "Z",
        propensity_col=schema.propensity or "p",
    )


def format_float(x: float) -> str:
    """Shortest round-trip representation of a float."""
    return repr(float(x))


def write_table(path, header: Sequence[str], columns: Sequence[np.ndarray], comment: str | None = None):
    """Write equal-length columns as CSV; integer arrays are written without a decimal point."""
    path = Path(path)
    cols = []
    for c in columns:
        c = np.asarray(c)
        if np.issubdtype(c.dtype, np.integer):
            cols.append([str(int(v)) for v in c])
        else:
            cols.append([format_float(v) for v in c])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(zip(*cols))


def write_csv(frame: CausalFrame, path, comment: str | None = None) -> Schema:
    """Write ``frame`` to CSV and return the schema that reads it back."""
    header = list(frame.column_names) + [frame.treatment_col, frame.outcome_col]
    columns = [frame.covariates[:, k] for k in range(frame.n_covariates)]
    columns += [frame.treatment, frame.outcome]
    schema = Schema(treatment=frame.treatment_col, outcome=frame.outcome_col, covariates=frame.column_names)
    if frame.instrument is not None:
        header.append(frame.instrument_col)
        columns.append(frame.instrument)
        schema = replace(schema, instrument=frame.instrument_col)
    if frame.propensity is not None:
        header.append(frame.propensity_col)
        columns.append(frame.propensity)
        schema = replace(schema, propensity=frame.propensity_col)
    write_table(path, header, columns, comment)
    return schema


@dataclass(frozen=True, eq=False)
class Split:
    """Disjoint train/validation/test row indices covering ``0..n-1``."""

    train_idx: np.ndarray
    valid_idx: np.ndarray
    test_idx: np.ndarray
    seed: int
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS

    def __post_init__(self):
        for name in ("train_idx", "valid_idx", "test_idx"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64))

    @property
    def n_rows(self) -> int:
        return len(self.train_idx) + len(self.valid_idx) + len(self.test_idx)

    def part(self, name: str) -> np.ndarray:
        return {"train": self.train_idx, "valid": self.valid_idx, "test": self.test_idx}[name]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "fractions": list(self.fractions),
            "train_idx": self.train_idx.tolist(),
            "valid_idx": self.valid_idx.tolist(),
            "test_idx": self.test_idx.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        return cls(
            train_idx=d["train_idx"],
            valid_idx=d["valid_idx"],
            test_idx=d["test_idx"],
            seed=int(d["seed"]),
            fractions=tuple(d.get("fractions", DEFAULT_FRACTIONS)),
        )

    def __eq__(self, other):
        if not isinstance(other, Split):
            return NotImplemented
        return (
            self.seed == other.seed
            and np.array_equal(self.train_idx, other.train_idx)
            and np.array_equal(self.valid_idx, other.valid_idx)
            and np.array_equal(self.test_idx, other.test_idx)
        )


def _part_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    # largest remainder; ties go to the earlier part
    raw = [f * n for f in fractions]
    sizes = [math.floor(r) for r in raw]
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - sizes[k]), k))
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    return sizes


def make_split(n: int, fractions: Sequence[float] = DEFAULT_FRACTIONS, seed: int = 0) -> Split:
    """Randomly partition ``n`` rows into train/valid/test.

    Part sizes follow the largest-remainder rule and the permutation comes from
    ``numpy.random.default_rng(seed)``, so the result depends only on the
    arguments. Indices within each part are sorted.

    Raises:
        DegenerateSplit: some part would be empty.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigError(f"fractions must be three positive numbers, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)!r}")
    if n < 3:
        raise DegenerateSplit(f"need at least 3 rows to split, got {n}")
    sizes = _part_sizes(n, fractions)
    if min(sizes) == 0:
        raise DegenerateSplit(f"fractions {fractions} on {n} rows give part sizes {sizes}")
    perm = np.random.default_rng(seed).permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return Split(
        train_idx=np.sort(perm[:a]),
        valid_idx=np.sort(perm[a:b]),
        test_idx=np.sort(perm[b:]),
        seed=int(seed),
        fractions=fractions,
    )


@dataclass(frozen=True, eq=False)
class Standardization:
    """Per-column location/scale; zero-variance columns keep scale 1."""

    mean: np.ndarray
    scale: np.ndarray
    passthrough: tuple[int, ...] = field(default=())

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def invert(self, Xs: np.ndarray) -> np.ndarray:
        return np.asarray(Xs, dtype=float) * self.scale + self.mean


def fit_standardization(X: np.ndarray, reference_idx: Iterable[int] | None = None) -> Standardization:
    """Population (divide-by-N) statistics of ``X`` restricted to ``reference_idx``.

    Constant columns are passed through unchanged (mean 0, scale 1).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    ref = X if reference_idx is None else X[np.asarray(reference_idx, dtype=np.int64)]
    if ref.shape[0] == 0:
        raise ConfigError("reference_idx must be non-empty")
    mean = ref.mean(axis=0)
    sd = ref.std(axis=0)
    const = ~(sd > 0)
    mean = np.where(const, 0.0, mean)
    scale = np.where(const, 1.0, sd)
    return Standardization(mean=mean, scale=scale, passthrough=tuple(int(k) for k in np.flatnonzero(const)))


def standardize(frame: CausalFrame, reference_idx) -> tuple[CausalFrame, Standardization]:
    """Standardize covariates with statistics from the reference rows only."""
    stats = fit_standardization(frame.covariates, reference_idx)
    return frame.with_covariates(stats.apply(frame.covariates)), stats
