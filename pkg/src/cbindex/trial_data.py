"""Ingestion and preparation of two-arm trial count data.

A dataset is a flat table of subjects: treatment arm (0/1), an event
count, a positive follow-up time in years, and a fixed-length covariate
vector.  This module loads such tables from CSV, scales covariates to
zero mean and unit variance, and checks randomization balance between
arms.  All operations are pure: they never mutate their inputs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    DegenerateCovariateError,
    RowParseError,
    SchemaError,
)

__all__ = [
    "SubjectRecord",
    "TrialDataset",
    "ScalingParams",
    "BalanceResult",
    "load_dataset",
    "standardize",
    "balance_check",
]

# Cell values treated as missing rather than malformed.  Rows containing
# any of these are dropped (complete-case analysis) and counted.
_MISSING_TOKENS = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: id, arm, event count, follow-up years, covariates."""

    id: str
    treatment: int
    events: int
    time: float
    covariates: tuple[float, ...]


@dataclass(eq=False)
class TrialDataset:
    """Immutable column-oriented view of a two-arm trial.

    Parameters
    ----------
    treatment : (n,) int array of 0/1 arm labels.
    events : (n,) non-negative int array of event counts.
    time : (n,) positive float array of follow-up times in years.
    covariates : (n, m) float array, all entries finite.
    covariate_names : m column labels.
    ids : optional subject labels; defaults to 1-based row numbers.
    n_missing_excluded : rows dropped during loading for missing cells.

    Notes
    -----
    Datasets with a single arm are constructible: arm-dependent
    operations raise their own errors so callers can distinguish
    "unusable file" from "estimator undefined on this data".
    """

    treatment: np.ndarray
    events: np.ndarray
    time: np.ndarray
    covariates: np.ndarray
    covariate_names: list[str]
    ids: list[str] = field(default_factory=list)
    n_missing_excluded: int = 0

    def __post_init__(self):
        self.treatment = np.asarray(self.treatment, dtype=np.int64)
        self.events = np.asarray(self.events, dtype=np.int64)
        self.time = np.asarray(self.time, dtype=np.float64)
        self.covariates = np.atleast_2d(np.asarray(self.covariates, dtype=np.float64))
        self.covariate_names = list(self.covariate_names)
        n = self.treatment.shape[0]
        if self.events.shape != (n,) or self.time.shape != (n,):
            raise ValueError("treatment, events, and time must share length")
        if self.covariates.shape[0] != n:
            raise ValueError("covariate rows must match the number of subjects")
        if self.covariates.shape[1] != len(self.covariate_names):
            raise ValueError("covariate_names must match covariate columns")
        if not np.all((self.treatment == 0) | (self.treatment == 1)):
            raise ValueError("treatment labels must be 0 or 1")
        if np.any(self.events < 0):
            raise ValueError("event counts must be non-negative")
        if not np.all(self.time > 0):
            raise ValueError("follow-up times must be positive")
        if not np.all(np.isfinite(self.covariates)):
            raise ValueError("covariates must be finite")
        if not self.ids:
            self.ids = [str(i + 1) for i in range(n)]
        elif len(self.ids) != n:
            raise ValueError("ids must match the number of subjects")

    @property
    def n(self) -> int:
        return self.treatment.shape[0]

    @property
    def m(self) -> int:
        return self.covariates.shape[1]

    @property
    def has_both_arms(self) -> bool:
        return bool(np.any(self.treatment == 0) and np.any(self.treatment == 1))

    @property
    def subjects(self) -> list[SubjectRecord]:
        """Row-wise record view (materialized on demand)."""
        return [
            SubjectRecord(
                id=self.ids[i],
                treatment=int(self.treatment[i]),
                events=int(self.events[i]),
                time=float(self.time[i]),
                covariates=tuple(float(v) for v in self.covariates[i]),
            )
            for i in range(self.n)
        ]

    def subset(self, indices: Sequence[int] | np.ndarray) -> "TrialDataset":
        """Row-subset (or resample, when indices repeat) of the dataset."""
        idx = np.asarray(indices, dtype=np.intp)
        return TrialDataset(
            treatment=self.treatment[idx],
            events=self.events[idx],
            time=self.time[idx],
            covariates=self.covariates[idx],
            covariate_names=self.covariate_names,
            ids=[self.ids[i] for i in idx],
        )

    def replace(self, **overrides) -> "TrialDataset":
        fields = dict(
            treatment=self.treatment,
            events=self.events,
            time=self.time,
            covariates=self.covariates,
            covariate_names=self.covariate_names,
            ids=self.ids,
            n_missing_excluded=self.n_missing_excluded,
        )
        fields.update(overrides)
        return TrialDataset(**fields)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrialDataset):
            return NotImplemented
        return (
            np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.events, other.events)
            and np.array_equal(self.time, other.time)
            and np.array_equal(self.covariates, other.covariates)
            and self.covariate_names == other.covariate_names
            and self.ids == other.ids
        )


@dataclass(frozen=True)
class ScalingParams:
    """Per-covariate location/scale recorded at standardization time.

    Stored so subjects from a *new* sample can be mapped into the space
    the model was trained in.  ``sds`` uses the n-1 divisor.
    """

    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "sds", np.asarray(self.sds, dtype=np.float64))
        if self.means.shape != self.sds.shape or self.means.ndim != 1:
            raise ValueError("means and sds must be 1-d arrays of equal length")
        if not np.all(self.sds > 0):
            raise ValueError("all scale parameters must be positive")

    @classmethod
    def identity(cls, m: int) -> "ScalingParams":
        return cls(means=np.zeros(m), sds=np.ones(m))

    def transform(self, covariates: np.ndarray) -> np.ndarray:
        x = np.asarray(covariates, dtype=np.float64)
        return (x - self.means) / self.sds


def _parse_float(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise RowParseError(row, column, f"not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise RowParseError(row, column, f"not finite: {raw!r}")
    return value


def _parse_count(raw: str, row: int, column: str) -> int:
    value = _parse_float(raw, row, column)
    if value != int(value):
        raise RowParseError(row, column, f"not an integer count: {raw!r}")
    if value < 0:
        raise RowParseError(row, column, f"negative count: {raw!r}")
    return int(value)


def load_dataset(
    source: str | IO[str], schema: Mapping[str, object]
) -> TrialDataset:
    """Read a trial dataset from CSV.

    Parameters
    ----------
    source : path or open text stream.  UTF-8, header row, comma
        separated, ``.`` decimal separator.
    schema : column-role mapping with keys ``treatment``, ``events``,
        ``time``, ``covariates`` (list of one or more column names) and
        optionally ``id``.

    Returns
    -------
    TrialDataset with the file's row order preserved.

    Raises
    ------
    SchemaError
        If a mapped column is absent from the header or the mapping is
        incomplete.
    RowParseError
        On malformed cells: non-numeric values, negative or non-integer
        counts, non-positive times, arm labels other than 0/1.  Rows
        with *missing* cells (empty, NA, NaN, null) are not errors;
        they are dropped and counted on ``n_missing_excluded``.
    """
    for key in ("treatment", "events", "time", "covariates"):
        if key not in schema:
            raise SchemaError(f"schema is missing the '{key}' role")
    cov_cols = list(schema["covariates"])
    if not cov_cols:
        raise SchemaError("schema must name at least one covariate column")

    if isinstance(source, (str, bytes)):
        try:
            stream: IO[str] = open(source, "r", encoding="utf-8", newline="")
        except OSError as exc:
            raise DataError(f"cannot read input: {exc}") from exc
        close = True
    else:
        stream = source
        close = False
    try:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty input: no header row") from None
        header = [h.strip() for h in header]
        positions: dict[str, int] = {}
        wanted = [str(schema["treatment"]), str(schema["events"]), str(schema["time"])]
        wanted += [str(c) for c in cov_cols]
        id_col = schema.get("id")
        if id_col is not None:
            wanted.append(str(id_col))
        for name in wanted:
            if name not in header:
                raise SchemaError(f"column '{name}' not found in header {header}")
            positions[name] = header.index(name)

        treatment: list[int] = []
        events: list[int] = []
        time: list[float] = []
        covariates: list[list[float]] = []
        ids: list[str] = []
        n_missing = 0

        for row_number, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise RowParseError(
                    row_number, "<row>", f"expected {len(header)} cells, got {len(row)}"
                )
            cells = {name: row[pos].strip() for name, pos in positions.items()}
            if any(c.lower() in _MISSING_TOKENS for c in cells.values()):
                n_missing += 1
                continue

            t_col = str(schema["treatment"])
            arm = _parse_float(cells[t_col], row_number, t_col)
            if arm not in (0.0, 1.0):
                raise RowParseError(row_number, t_col, f"arm must be 0 or 1: {cells[t_col]!r}")
            y_col = str(schema["events"])
            count = _parse_count(cells[y_col], row_number, y_col)
            time_col = str(schema["time"])
            followup = _parse_float(cells[time_col], row_number, time_col)
            if followup <= 0:
                raise RowParseError(row_number, time_col, f"time must be positive: {cells[time_col]!r}")
            x = [_parse_float(cells[str(c)], row_number, str(c)) for c in cov_cols]

            treatment.append(int(arm))
            events.append(count)
            time.append(followup)
            covariates.append(x)
            ids.append(cells[str(id_col)] if id_col is not None else str(len(ids) + 1))
    finally:
        if close:
            stream.close()

    if not treatment:
        raise SchemaError("no usable data rows after exclusions")
    return TrialDataset(
        treatment=np.array(treatment),
        events=np.array(events),
        time=np.array(time),
        covariates=np.array(covariates),
        covariate_names=[str(c) for c in cov_cols],
        ids=ids,
        n_missing_excluded=n_missing,
    )


def load_dataset_from_text(text: str, schema: Mapping[str, object]) -> TrialDataset:
    """Convenience wrapper over :func:`load_dataset` for in-memory CSV."""
    return load_dataset(io.StringIO(text), schema)


def standardize(d: TrialDataset) -> tuple[TrialDataset, ScalingParams]:
    """Scale every covariate column to sample mean 0 and sample SD 1.

    The treatment, events, and time columns are never read or changed.
    Uses the n-1 divisor.  Binary covariates are scaled like continuous
    ones.

    Raises
    ------
    DegenerateCovariateError
        If any covariate column is constant.
    """
    x = d.covariates
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1) if d.n > 1 else np.zeros(d.m)
    for j, sd in enumerate(sds):
        if sd == 0 or not np.isfinite(sd):
            raise DegenerateCovariateError(d.covariate_names[j])
    scaled = (x - means) / sds
    params = ScalingParams(means=means, sds=sds)
    return d.replace(covariates=scaled), params


@dataclass(frozen=True)
class BalanceResult:
    """Standardized mean differences between arms, one per covariate.

    ``smd[j]`` is NaN where the difference is undefined (zero spread).
    ``flagged`` lists covariate names whose SMD exceeds the threshold,
    including infinite SMDs (arms constant at different values).
    """

    covariate_names: list[str]
    smd: np.ndarray
    threshold: float
    flagged: list[str]

    def as_dict(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.covariate_names, self.smd)}


def balance_check(d: TrialDataset, threshold: float = 0.05) -> BalanceResult:
    """Compare covariate means between arms on a scale-free footing.

    For covariate ``j`` the statistic is ``|mean1 - mean0| / s`` with
    ``s = sqrt((sd0^2 + sd1^2) / 2)``.  When both within-arm SDs are
    zero but the column still varies overall (each arm constant at a
    different value), the combined-sample SD is used instead so the
    imbalance is still quantified; a column constant everywhere has no
    defined difference and reports NaN.
    """
    if not d.has_both_arms:
        raise ValueError("balance check needs both arms present")
    mask0 = d.treatment == 0
    mask1 = ~mask0
    x0, x1 = d.covariates[mask0], d.covariates[mask1]
    smd = np.full(d.m, np.nan)
    for j in range(d.m):
        diff = abs(x1[:, j].mean() - x0[:, j].mean())
        s0 = x0[:, j].std(ddof=1) if mask0.sum() > 1 else 0.0
        s1 = x1[:, j].std(ddof=1) if mask1.sum() > 1 else 0.0
        pooled = math.sqrt((s0**2 + s1**2) / 2)
        if pooled == 0:
            pooled = d.covariates[:, j].std(ddof=1)
        if pooled > 0:
            smd[j] = diff / pooled
    flagged = [
        name
        for name, v in zip(d.covariate_names, smd)
        if np.isfinite(v) and v > threshold
    ]
    return BalanceResult(
        covariate_names=list(d.covariate_names),
        smd=smd,
        threshold=threshold,
        flagged=flagged,
    )


def make_dataset(
    treatment: Iterable[int],
    events: Iterable[int],
    time: Iterable[float],
    covariates: np.ndarray,
    covariate_names: Sequence[str] | None = None,
    ids: Sequence[str] | None = None,
) -> TrialDataset:
    """Build a dataset from plain arrays, naming covariates x1..xm."""
    covariates = np.atleast_2d(np.asarray(covariates, dtype=np.float64))
    if covariate_names is None:
        covariate_names = [f"x{j + 1}" for j in range(covariates.shape[1])]
    return TrialDataset(
        treatment=np.asarray(list(treatment)),
        events=np.asarray(list(events)),
        time=np.asarray(list(time)),
        covariates=covariates,
        covariate_names=list(covariate_names),
        ids=list(ids) if ids is not None else [],
    )
