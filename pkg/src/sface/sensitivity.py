"""Effects over grids of subtype-switching probabilities.

The nuisance fits and the bootstrap replicates do not depend on the
switching probabilities, so a grid costs one analysis plus one bootstrap:
every replicate's :class:`~sface.identification.ComponentSet` is cached and
each cell only re-evaluates the closed-form identification step.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .estimators import Method
from .identification import (IdentificationError, SensitivityParams, lambda_bounds, sface,
                             theta, validate_against)
from .inference import BootstrapPlan, Z975, bootstrap, default_threads
from .pipeline import AnalysisConfig, analyze
from .profiles import AssumptionCombo

log = logging.getLogger(__name__)

GRID_ESTIMANDS = ("SFACE1", "SFACE2", "Theta")
Axis = Union[float, Tuple[float, float, float]]


class GridWarning(UserWarning):
    pass


def axis_values(axis: Axis) -> Tuple[float, ...]:
    """Grid points of a fixed value or an inclusive ``(lo, hi, step)`` range.

    >>> axis_values((0.0, 0.1, 0.05))
    (0.0, 0.05, 0.1)
    """
    if isinstance(axis, (int, float)):
        vals = (float(axis),)
    else:
        lo, hi, step = (float(v) for v in axis)
        if step <= 0 or hi < lo:
            raise ValueError(f"bad range {axis!r}: need lo <= hi and step > 0")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        vals = tuple(round(lo + i * step, 12) for i in range(count))
    for v in vals:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"grid value {v} is outside [0, 1]")
    return vals


def parse_axis(text: str) -> Axis:
    """``"0.1"`` or ``"lo:hi:step"``."""
    parts = str(text).split(":")
    if len(parts) == 1:
        return float(parts[0])
    if len(parts) != 3:
        raise ValueError(f"expected a value or lo:hi:step, got {text!r}")
    return tuple(float(p) for p in parts)


@dataclass(frozen=True)
class GridSpec:
    lambda1: Axis = 0.0
    lambda2: Axis = 0.0
    combo: AssumptionCombo = AssumptionCombo()
    scale: str = "diff"
    method: Method = Method.DR
    alpha: float = 0.05
    lambda1_0: float = 0.0
    lambda2_0: float = 0.0
    clip_to_bounds: bool = True

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if isinstance(self.combo, str):
            object.__setattr__(self, "combo", AssumptionCombo.parse(self.combo))
        if self.scale not in ("diff", "rr"):
            raise ValueError(f"scale must be diff or rr, got {self.scale!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        for l1 in self.lambda1_values:
            for l2 in self.lambda2_values:
                validate_against(SensitivityParams(l1, l2, self.lambda1_0, self.lambda2_0),
                                 self.combo)

    @property
    def lambda1_values(self):
        return axis_values(self.lambda1)

    @property
    def lambda2_values(self):
        return axis_values(self.lambda2)

    @property
    def z(self):
        if self.alpha == 0.05:
            return Z975
        from scipy.stats import norm
        return float(norm.ppf(1.0 - self.alpha / 2.0))


@dataclass(frozen=True)
class GridRow:
    lambda1: float
    lambda2: float
    estimand: str
    point: float
    se: float
    ci_low: float
    ci_high: float
    significant: bool
    n_boot: int
    n_dropped: int
    error: str = ""


@dataclass
class GridResult:
    spec: GridSpec
    rows: List[GridRow]
    bounds: Tuple[float, float]
    clipped: Dict[str, Tuple[float, ...]] = field(default_factory=dict)
    n_boot_failed: int = 0

    def cells(self, estimand):
        return [r for r in self.rows if r.estimand == estimand]


def excludes_null(ci_low, ci_high, scale):
    """CI-exclusion predicate: the interval misses 0 (diff) or 1 (rr)."""
    null = 0.0 if scale == "diff" else 1.0
    if not (math.isfinite(ci_low) and math.isfinite(ci_high)):
        return False
    return ci_low > null or ci_high < null


def _cell_values(comp, params, scale):
    e1 = sface(comp, params, 1, scale)
    e2 = sface(comp, params, 2, scale)
    return {"SFACE1": e1, "SFACE2": e2, "Theta": theta(e1, e2)}


def _replicate_admits(comp, params):
    b1, b2 = lambda_bounds(comp)
    return params.lambda1 <= b1 and params.lambda2 <= b2


def _clip(values, bound, name):
    kept = tuple(v for v in values if v <= bound + 1e-12)
    if len(kept) < len(values):
        warnings.warn(f"{name} grid truncated at its data-driven bound {bound:.4g}",
                      GridWarning, stacklevel=3)
    if not kept:
        raise ValueError(f"every {name} grid value exceeds its data-driven bound {bound:.4g}")
    return kept


def run_grid(data, spec: GridSpec, plan: BootstrapPlan, *, config: Optional[AnalysisConfig] = None,
             threads: Optional[int] = None) -> GridResult:
    """Point estimates, bootstrap SEs and Wald CIs for every grid cell.

    Cells are emitted row-major in ``(lambda2, lambda1)``, three estimands per
    cell. Identification failures are recorded on the cell; replicate values
    whose sensitivity parameters exceed that replicate's bounds are dropped
    and counted.
    """
    threads = default_threads() if threads is None else threads
    config = replace(config or AnalysisConfig(), methods=(spec.method,), conditional=False)
    full = analyze(data, config)
    comp = full.components[spec.method]
    bounds = lambda_bounds(comp)
    l1s, l2s = spec.lambda1_values, spec.lambda2_values
    clipped = {}
    if spec.clip_to_bounds:
        new1, new2 = _clip(l1s, bounds[0], "lambda1"), _clip(l2s, bounds[1], "lambda2")
        if new1 != l1s:
            clipped["lambda1"] = new1
        if new2 != l2s:
            clipped["lambda2"] = new2
        l1s, l2s = new1, new2

    boot = bootstrap(data, lambda b: analyze(b, config, start_y=full.fit_y, start_a=full.fit_a)
                     .components[spec.method], plan, threads=threads)
    reps = boot.ok
    rows = []
    z = spec.z
    for l2 in l2s:
        for l1 in l1s:
            params = SensitivityParams(l1, l2, spec.lambda1_0, spec.lambda2_0)
            try:
                point = _cell_values(comp, params, spec.scale)
            except IdentificationError as exc:
                for name in GRID_ESTIMANDS:
                    rows.append(GridRow(l1, l2, name, math.nan, math.nan, math.nan, math.nan,
                                        False, 0, 0, str(exc)))
                continue
            vals = {name: [] for name in GRID_ESTIMANDS}
            dropped = 0
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                for rc in reps:
                    try:
                        if not _replicate_admits(rc, params):
                            raise IdentificationError("outside replicate bounds")
                        rv = _cell_values(rc, params, spec.scale)
                    except IdentificationError:
                        dropped += 1
                        continue
                    for name in GRID_ESTIMANDS:
                        vals[name].append(rv[name])
            for name in GRID_ESTIMANDS:
                v = np.asarray(vals[name])
                se = float(np.std(v, ddof=1)) if len(v) >= 2 else math.nan
                lo, hi = point[name] - z * se, point[name] + z * se
                rows.append(GridRow(l1, l2, name, point[name], se, lo, hi,
                                    excludes_null(lo, hi, spec.scale), len(v), dropped))
    return GridResult(spec, rows, bounds, clipped, boot.n_failed)


def significance_partition(result: GridResult, estimand: str):
    """Per ``lambda2`` row, the smallest ``lambda1`` where significance flips.

    Returns a list of ``(lambda2, lambda1_or_None)``. When the first cell of
    a row is already significant the boundary sits at the grid minimum; a
    row that never changes state has no boundary (``None``) unless it is
    significant throughout.
    """
    cells = result.cells(estimand)
    if not cells:
        raise ValueError(f"no cells for estimand {estimand!r}")
    by_row = {}
    for c in cells:
        by_row.setdefault(c.lambda2, []).append(c)
    widths = {len(v) for v in by_row.values()}
    if len(widths) != 1:
        raise ValueError("grid is not rectangular")
    out = []
    for l2 in sorted(by_row):
        row = sorted(by_row[l2], key=lambda c: c.lambda1)
        flip = None
        if row[0].significant:
            flip = row[0].lambda1
        else:
            for prev, cur in zip(row, row[1:]):
                if cur.significant != prev.significant:
                    flip = cur.lambda1
                    break
        out.append((l2, flip))
    return out


GRID_HEADER = ("lambda1", "lambda2", "estimand", "method", "scale", "point", "se", "ci_low",
               "ci_high", "significant", "n_boot", "n_dropped", "error")


def _num(x, per=1.0):
    return "nan" if not math.isfinite(x) else repr(float(x * per))


def write_grid_csv(result: GridResult, fh, per: float = 1.0):
    """Tidy CSV, one row per cell and estimand.

    ``per`` rescales difference-scale quantities (e.g. ``1e5``).
    """
    scale = result.spec.scale
    k = per if scale == "diff" else 1.0
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(GRID_HEADER)
    for r in result.rows:
        w.writerow([repr(r.lambda1), repr(r.lambda2), r.estimand, result.spec.method.value, scale,
                    _num(r.point, k), _num(r.se, k), _num(r.ci_low, k), _num(r.ci_high, k),
                    int(r.significant), r.n_boot, r.n_dropped, r.error])


def boundary_json(result: GridResult) -> str:
    out = {name: [{"lambda2": l2, "lambda1": l1} for l2, l1 in significance_partition(result, name)]
           for name in GRID_ESTIMANDS if result.cells(name)}
    return json.dumps(out, sort_keys=True, indent=2)
