"""Observed-data container, CSV ingestion and report types."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DegenerateInputError, SchemaError, ValidationError

OUTCOME_KINDS = ("continuous", "binary")
ESTIMANDS = ("theta0", "delta0", "delta1", "NDE", "NIE", "total")
SCALES = ("difference", "risk_ratio", "odds_ratio")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class MediationDataset:
    """n i.i.d. records of (Y, E, M, X).

    ``x`` holds the pre-exposure covariates without an intercept column.
    ``latent`` optionally carries simulation-only variables (never written to
    CSV and never used by estimators).
    """

    y: np.ndarray
    e: np.ndarray
    m: np.ndarray
    x: np.ndarray
    x_names: tuple[str, ...] = ()
    outcome_kind: str = "continuous"
    mediator_support_size: int = 2
    latent: Mapping[str, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        n = y.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one row")
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(n, -1) if x.size else np.empty((n, 0))
        if x.shape[0] != n:
            raise ValidationError(f"x has {x.shape[0]} rows, expected {n}")
        e_raw = np.asarray(self.e, dtype=float).reshape(-1)
        m_raw = np.asarray(self.m, dtype=float).reshape(-1)
        if e_raw.shape[0] != n or m_raw.shape[0] != n:
            raise ValidationError("y, e and m must have equal length")
        for name, col in (("y", y), ("e", e_raw), ("m", m_raw)):
            bad = np.flatnonzero(~np.isfinite(col))
            if bad.size:
                raise ValidationError(f"missing or non-finite {name} at row {bad[0]}")
        bad = np.argwhere(~np.isfinite(x))
        if bad.size:
            raise ValidationError(f"missing or non-finite covariate at row {bad[0][0]}, column {bad[0][1]}")
        bad = np.flatnonzero((e_raw != 0) & (e_raw != 1))
        if bad.size:
            raise ValidationError(f"exposure must be 0/1; row {bad[0]} has {e_raw[bad[0]]!r}")
        k = int(self.mediator_support_size)
        if k < 2:
            raise ValidationError("mediator support size must be at least 2")
        bad = np.flatnonzero((m_raw != np.round(m_raw)) | (m_raw < 0) | (m_raw > k - 1))
        if bad.size:
            raise ValidationError(f"mediator must be an integer in 0..{k - 1}; row {bad[0]} has {m_raw[bad[0]]!r}")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise ValidationError(f"unknown outcome kind {self.outcome_kind!r}")
        if self.outcome_kind == "binary":
            bad = np.flatnonzero((y != 0) & (y != 1))
            if bad.size:
                raise ValidationError(f"binary outcome must be 0/1; row {bad[0]} has {y[bad[0]]!r}")
        names = tuple(self.x_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1] or len(set(names)) != len(names):
            raise ValidationError("x_names must be unique and match the covariate columns")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "e", _frozen(e_raw.astype(np.int64)))
        object.__setattr__(self, "m", _frozen(m_raw.astype(np.int64)))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "x_names", names)
        object.__setattr__(self, "mediator_support_size", k)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def take(self, index: np.ndarray) -> "MediationDataset":
        """Rows ``index`` (with repetition allowed) as a new dataset."""
        index = np.asarray(index)
        return MediationDataset(
            self.y[index], self.e[index], self.m[index], self.x[index],
            self.x_names, self.outcome_kind, self.mediator_support_size,
        )

    def canonical_order(self) -> np.ndarray:
        """Row permutation sorting records lexicographically by (y, e, m, x)."""
        keys = [self.x[:, j] for j in range(self.p - 1, -1, -1)] + [self.m, self.e, self.y]
        return np.lexsort(keys)

    def require_both_arms(self) -> None:
        n1 = int(self.e.sum())
        if n1 == 0 or n1 == self.n:
            raise DegenerateInputError("both exposure arms must be nonempty")

    def equals(self, other: "MediationDataset") -> bool:
        return (
            self.x_names == other.x_names
            and self.outcome_kind == other.outcome_kind
            and self.mediator_support_size == other.mediator_support_size
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.e, other.e)
            and np.array_equal(self.m, other.m)
            and np.array_equal(self.x, other.x)
        )


@dataclass(frozen=True)
class EstimateReport:
    estimand: str
    scale: str
    point: float
    se: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    method: str = ""
    diagnostics: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.estimand not in ESTIMANDS:
            raise ValueError(f"unknown estimand {self.estimand!r}")
        if self.scale not in SCALES:
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.se is not None and not self.se >= 0:
            raise ValueError("standard error must be nonnegative")
        if self.ci_low is not None and self.ci_high is not None:
            if not self.ci_low <= self.point <= self.ci_high:
                raise ValueError("confidence interval must contain the point estimate")

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "scale": self.scale,
            "point": self.point,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "method": self.method,
            "diagnostics": dict(self.diagnostics),
        }


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV header names onto the dataset fields.

    ``x=None`` takes every column not used for y, e or m, in file order.
    ``outcome_kind="auto"`` means binary exactly when every y is 0 or 1.
    """

    y: str = "y"
    e: str = "e"
    m: str = "m"
    x: tuple[str, ...] | None = None
    outcome_kind: str = "auto"
    mediator_support_size: int | None = None


def _parse_cell(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"non-numeric value {text!r} at row {row}, column {column!r}") from None
    if not math.isfinite(value):
        raise ValidationError(f"non-finite value {text!r} at row {row}, column {column!r}")
    return value


def load_csv(path: str | Path, schema: ColumnSchema | None = None) -> MediationDataset:
    """Read a header-first UTF-8 CSV into a validated dataset.

    Row numbers in error messages count data rows from 1 (the header is row 0).
    """
    schema = schema or ColumnSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    if len(set(header)) != len(header):
        raise SchemaError("duplicate column names in header")
    for role in ("y", "e", "m"):
        if getattr(schema, role) not in header:
            raise SchemaError(f"missing {role} column {getattr(schema, role)!r}")
    used = {schema.y, schema.e, schema.m}
    if schema.x is None:
        x_cols = tuple(h for h in header if h not in used)
    else:
        x_cols = tuple(schema.x)
        missing = [c for c in x_cols if c not in header]
        if missing:
            raise SchemaError(f"missing covariate column(s) {', '.join(map(repr, missing))}")
        overlap = used.intersection(x_cols)
        if overlap:
            raise SchemaError(f"column(s) {sorted(overlap)} cannot be both covariate and y/e/m")
    idx = {h: j for j, h in enumerate(header)}
    if not rows:
        raise ValidationError("no data rows")
    cols = {c: np.empty(len(rows)) for c in (schema.y, schema.e, schema.m, *x_cols)}
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise ValidationError(f"row {i} has {len(r)} cells, header has {len(header)}")
        for c, arr in cols.items():
            arr[i - 1] = _parse_cell(r[idx[c]].strip(), i, c)

    e, m, y = cols[schema.e], cols[schema.m], cols[schema.y]
    bad = np.flatnonzero((e != 0) & (e != 1))
    if bad.size:
        raise ValidationError(f"exposure must be 0/1; row {bad[0] + 1}, column {schema.e!r} has {e[bad[0]]!r}")
    k = schema.mediator_support_size or max(2, int(m.max()) + 1 if m.size else 2)
    bad = np.flatnonzero((m != np.round(m)) | (m < 0) | (m > k - 1))
    if bad.size:
        raise ValidationError(
            f"mediator must be an integer in 0..{k - 1}; row {bad[0] + 1}, column {schema.m!r} has {m[bad[0]]!r}"
        )
    kind = schema.outcome_kind
    if kind == "auto":
        kind = "binary" if np.all((y == 0) | (y == 1)) else "continuous"
    elif kind == "binary":
        bad = np.flatnonzero((y != 0) & (y != 1))
        if bad.size:
            raise ValidationError(f"binary outcome must be 0/1; row {bad[0] + 1}, column {schema.y!r}")
    x = np.column_stack([cols[c] for c in x_cols]) if x_cols else np.empty((len(rows), 0))
    return MediationDataset(y, e, m, x, x_cols, kind, k)


def write_csv(d: MediationDataset, path: str | Path, schema: ColumnSchema | None = None) -> None:
    """Write ``d`` so that ``load_csv`` reproduces it exactly (shortest round-trip reals)."""
    schema = schema or ColumnSchema()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([schema.y, schema.e, schema.m, *d.x_names])
        for i in range(d.n):
            w.writerow([repr(float(d.y[i])), int(d.e[i]), int(d.m[i]), *(repr(float(v)) for v in d.x[i])])


@dataclass(frozen=True)
class PositivityReport:
    counts: Mapping[tuple[int, int], int]
    warnings: tuple[str, ...]

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def empirical_positivity_report(d: MediationDataset) -> PositivityReport:
    """Count observations in every (e, m) cell and warn about empty cells."""
    counts = {}
    warnings = []
    for e in (0, 1):
        for m in range(d.mediator_support_size):
            c = int(np.count_nonzero((d.e == e) & (d.m == m)))
            counts[(e, m)] = c
            if c == 0:
                warnings.append(f"no observations with E={e}, M={m}")
    return PositivityReport(counts, tuple(warnings))

