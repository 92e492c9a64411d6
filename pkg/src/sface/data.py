"""Analysis datasets: CSV ingestion, validation and missing-subtype weighting.

Outcome codes: 0 disease-free, 1 subtype 1, 2 subtype 2, 9 diseased with an
unknown subtype.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .glm import FitError, fit_logistic

log = logging.getLogger(__name__)

OUTCOME_CODES = (0, 1, 2, 9)
UNKNOWN_SUBTYPE = 9
MISSING_TOKENS = ("", "NA")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented, immutable set of analysis units.

    ``extra`` carries auxiliary numeric columns (for example case-only
    predictors of subtype availability) that are not model covariates.
    """

    exposure: np.ndarray
    covariates: np.ndarray
    outcome: np.ndarray
    weight: np.ndarray
    covariate_names: tuple = ()
    extra: Mapping[str, np.ndarray] = field(default_factory=dict)
    dropped_rows: int = 0

    def __post_init__(self):
        a = _frozen(self.exposure, float)
        n = len(a)
        if n < 1:
            raise DataError("dataset is empty")
        x = np.asarray(self.covariates, dtype=float)
        if x.size == 0:
            x = np.zeros((n, 0))
        elif not (x.ndim == 2 and x.shape[0] == n):
            x = x.reshape(n, -1)
        x = _frozen(x, float)
        y = _frozen(self.outcome, int)
        w = _frozen(self.weight, float)
        if len(y) != n or len(w) != n or x.shape[0] != n:
            raise DataError("column lengths differ")
        if not np.all((a == 0) | (a == 1)):
            raise DataError("exposure must be binary 0/1")
        if not np.all(np.isin(y, OUTCOME_CODES)):
            bad = int(np.flatnonzero(~np.isin(y, OUTCOME_CODES))[0])
            raise DataError(f"unknown outcome code {y[bad]} at row {bad}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DataError("weights must be finite and nonnegative")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError("covariate_names does not match covariate dimension")
        extra = {k: _frozen(v, float) for k, v in dict(self.extra).items()}
        for k, v in extra.items():
            if len(v) != n:
                raise DataError(f"auxiliary column {k!r} has wrong length")
        object.__setattr__(self, "exposure", a)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "extra", extra)

    @classmethod
    def from_arrays(cls, exposure, covariates, outcome, weight=None, covariate_names=(),
                    extra=None):
        n = len(exposure)
        return cls(exposure, covariates, outcome,
                   np.ones(n) if weight is None else weight,
                   tuple(covariate_names), dict(extra or {}))

    @property
    def n(self):
        return len(self.exposure)

    def __len__(self):
        return self.n

    def take(self, idx) -> "Dataset":
        """Row subset (or resample, when ``idx`` repeats rows)."""
        idx = np.asarray(idx)
        return Dataset(self.exposure[idx], self.covariates[idx], self.outcome[idx],
                       self.weight[idx], self.covariate_names,
                       {k: v[idx] for k, v in self.extra.items()})

    def with_weight(self, weight) -> "Dataset":
        return Dataset(self.exposure, self.covariates, self.outcome, weight,
                       self.covariate_names, self.extra, self.dropped_rows)

    def column(self, name):
        if name in self.covariate_names:
            return self.covariates[:, self.covariate_names.index(name)]
        if name in self.extra:
            return self.extra[name]
        raise KeyError(name)

    def subtype_indicator(self, k):
        return (self.outcome == k).astype(float)

    def require_both_arms(self):
        if not (np.any(self.exposure == 1) and np.any(self.exposure == 0)):
            raise DataError("exposure column must contain both 0 and 1")

    def equals(self, other, atol=0.0) -> bool:
        return (self.covariate_names == other.covariate_names
                and self.n == other.n
                and np.array_equal(self.exposure, other.exposure)
                and np.array_equal(self.outcome, other.outcome)
                and np.allclose(self.covariates, other.covariates, rtol=0, atol=atol)
                and np.allclose(self.weight, other.weight, rtol=0, atol=atol)
                and set(self.extra) == set(other.extra)
                and all(np.allclose(self.extra[k], other.extra[k], rtol=0, atol=atol,
                                    equal_nan=True) for k in self.extra))


@dataclass(frozen=True)
class Schema:
    """Column mapping for :func:`load_csv`."""

    exposure: str
    outcome: str
    covariates: tuple = ()
    weight: Optional[str] = None
    case_covariates: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "case_covariates", tuple(self.case_covariates))


def _parse(value, row, col):
    if value.strip() in MISSING_TOKENS:
        return np.nan
    try:
        return float(value)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: non-numeric value {value!r}") from None


def load_csv(path, schema: Schema) -> Dataset:
    """Read a headed CSV file into a :class:`Dataset`.

    Columns are matched by name. Rows with a missing exposure or covariate are
    dropped and counted in ``Dataset.dropped_rows``; case-only covariates may be
    missing for disease-free rows but not for cases.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            if not header:
                raise DataError(f"{path}: missing header row")
            needed = [schema.exposure, schema.outcome, *schema.covariates,
                      *schema.case_covariates] + ([schema.weight] if schema.weight else [])
            absent = [c for c in needed if c not in header]
            if absent:
                raise DataError(f"{path}: columns not found: {', '.join(absent)}")
            rows = list(reader)
    except csv.Error as exc:
        raise DataError(f"{path}: malformed CSV ({exc})") from exc

    a, x, y, w, cc = [], [], [], [], []
    dropped = 0
    for i, rec in enumerate(rows, start=2):  # header is line 1
        if None in rec or any(v is None for v in rec.values()):
            raise DataError(f"{path}: row {i} has the wrong number of fields")
        yi = _parse(rec[schema.outcome], i, schema.outcome)
        if np.isnan(yi):
            raise DataError(f"row {i}, column {schema.outcome!r}: missing outcome "
                            "(code unknown subtypes as 9)")
        if yi not in OUTCOME_CODES:
            raise DataError(f"row {i}, column {schema.outcome!r}: unknown outcome code {yi:g}")
        ai = _parse(rec[schema.exposure], i, schema.exposure)
        xi = [_parse(rec[c], i, c) for c in schema.covariates]
        ci = [_parse(rec[c], i, c) for c in schema.case_covariates]
        if np.isnan(ai) or any(np.isnan(xi)) or (yi != 0 and any(np.isnan(ci))):
            dropped += 1
            continue
        if ai not in (0.0, 1.0):
            raise DataError(f"row {i}, column {schema.exposure!r}: non-binary exposure {ai:g}")
        wi = 1.0
        if schema.weight:
            wi = _parse(rec[schema.weight], i, schema.weight)
            if not np.isfinite(wi) or wi < 0:
                raise DataError(f"row {i}, column {schema.weight!r}: invalid weight")
        a.append(ai)
        x.append(xi)
        y.append(int(yi))
        w.append(wi)
        cc.append(ci)
    if not a:
        raise DataError(f"{path}: no usable rows")
    if dropped:
        log.warning("%s: dropped %d rows with missing values", path, dropped)
    n, p = len(a), len(schema.covariates)
    extra = {}
    if schema.case_covariates:
        cc = np.asarray(cc, dtype=float).reshape(n, -1)
        extra = {c: cc[:, j] for j, c in enumerate(schema.case_covariates)}
    ds = Dataset(np.asarray(a), np.asarray(x, dtype=float).reshape(n, p), np.asarray(y),
                 np.asarray(w), schema.covariates, extra, dropped)
    return ds


def write_csv(data: Dataset, path, *, exposure="A", outcome="Y", weight="w"):
    """Write ``data`` so that :func:`load_csv` with :func:`default_schema` reads it back."""
    names = [exposure, outcome, weight, *data.covariate_names, *data.extra]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(names)
        for i in range(data.n):
            vals = [int(data.exposure[i]), int(data.outcome[i]), repr(float(data.weight[i]))]
            vals += [repr(float(v)) for v in data.covariates[i]]
            vals += ["NA" if np.isnan(v[i]) else repr(float(v[i])) for v in data.extra.values()]
            wr.writerow(vals)


def default_schema(data: Dataset, *, exposure="A", outcome="Y", weight="w") -> Schema:
    return Schema(exposure, outcome, data.covariate_names, weight, tuple(data.extra))


# ---------------------------------------------------------------------------
# Missing-subtype inverse probability weighting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MissingnessModelSpec:
    """Predictors of subtype availability among cases, and the weight cap quantile."""

    covariate_names: tuple = ()
    truncation_quantile: float = 0.99

    def __post_init__(self):
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if not 0.0 < self.truncation_quantile <= 1.0:
            raise ValueError("truncation_quantile must lie in (0, 1]")


@dataclass(frozen=True)
class MissingnessSummary:
    n_cases: int
    n_unknown_removed: int
    n_truncated: int
    threshold: float
    weight_min: float
    weight_max: float
    weight_mean: float

    def to_dict(self):
        return {k: (float(v) if isinstance(v, float) else int(v))
                for k, v in self.__dict__.items()}


def truncate_weights(weights, quantile):
    """Cap ``weights`` at their empirical ``quantile`` (linear interpolation,
    the type-7 convention). Returns ``(capped, threshold, n_capped)``."""
    weights = np.asarray(weights, dtype=float)
    thr = float(np.quantile(weights, quantile, method="linear"))
    capped = np.minimum(weights, thr)
    return capped, thr, int(np.sum(weights > thr))


def fit_missingness_weights(data: Dataset, spec: MissingnessModelSpec,
                            glm: Callable = fit_logistic):
    """Weighted dataset plus a :class:`MissingnessSummary`.

    See :func:`missingness_weights`.
    """
    y = data.outcome
    cases = y != 0
    observed = (y == 1) | (y == 2)
    n_cases = int(cases.sum())
    if n_cases == 0:
        raise DataError("no diseased units; missing-subtype weighting is undefined")
    if not np.any(y == UNKNOWN_SUBTYPE):
        w = data.weight
        return data, MissingnessSummary(n_cases, 0, 0, 1.0, float(w.min()), float(w.max()),
                                        float(w.mean()))
    if not np.any(observed):
        raise DataError("no case has an observed subtype")
    X = (np.column_stack([data.column(c)[cases] for c in spec.covariate_names])
         if spec.covariate_names else None)
    fit = glm(X, observed[cases].astype(float), data.weight[cases])
    Zc = np.column_stack([np.ones(n_cases)] + ([] if X is None else [X]))
    p = 1.0 / (1.0 + np.exp(-(Zc @ fit.params)))
    raw = 1.0 / p[observed[cases]]
    capped, thr, n_cap = truncate_weights(raw, spec.truncation_quantile)
    new_w = data.weight.astype(float).copy()
    obs_idx = np.flatnonzero(observed)
    new_w[obs_idx] = new_w[obs_idx] * capped
    keep = y != UNKNOWN_SUBTYPE
    out = data.with_weight(new_w).take(np.flatnonzero(keep))
    summary = MissingnessSummary(n_cases, int((~keep).sum()), n_cap, thr,
                                 float(capped.min()), float(capped.max()),
                                 float(capped.mean()))
    return out, summary


def missingness_weights(data: Dataset, spec: MissingnessModelSpec,
                        glm: Callable = fit_logistic) -> Dataset:
    """Inverse-probability-of-observed-subtype weighting.

    A logistic model for "subtype observed" is fitted among diseased units
    (codes 1, 2, 9). Each case with an observed subtype gets weight
    ``1 / p_hat`` (multiplying any existing weight), capped at the
    ``spec.truncation_quantile`` quantile of the raw weights. Units with code 9
    are removed and disease-free units are untouched.

    Raises
    ------
    DataError
        If there are no diseased units, or none with an observed subtype.
    FitError
        If the availability model cannot be fitted (e.g. separation).
    """
    return fit_missingness_weights(data, spec, glm)[0]


__all__ = [
    "Dataset", "Schema", "DataError", "FitError", "MissingnessModelSpec", "MissingnessSummary",
    "load_csv", "write_csv", "default_schema", "missingness_weights",
    "fit_missingness_weights", "truncate_weights", "OUTCOME_CODES", "UNKNOWN_SUBTYPE",
]
