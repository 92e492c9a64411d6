"""Nonparametric bootstrap, Wald intervals and the heterogeneity test."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Hashable, List, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .glm import FitError
from .identification import IdentificationError
from .rng import stream

log = logging.getLogger(__name__)

Z975 = 1.959964
MAX_FAILURE_FRACTION = 0.10
# Failures a replicate may raise without aborting the whole bootstrap.
REPLICATE_ERRORS = (FitError, IdentificationError, np.linalg.LinAlgError)


class BootstrapError(RuntimeError):
    """Too many replicates failed."""


def default_threads() -> int:
    """Worker count from ``SFACE_THREADS``, else 1."""
    raw = os.environ.get("SFACE_THREADS", "").strip()
    if not raw:
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError("SFACE_THREADS must be a positive integer")
    return n


@dataclass(frozen=True)
class BootstrapPlan:
    n_reps: int = 200
    seed: int = 0
    refit_missingness: bool = True

    def __post_init__(self):
        if self.n_reps < 2:
            raise ValueError("n_reps must be at least 2")


@dataclass(frozen=True)
class EffectEstimate:
    estimand: str
    scale: str
    method: str
    point: float
    se: float
    ci_low: float
    ci_high: float
    n_boot: int
    seed: int

    def to_dict(self, per=1e5):
        d = dict(self.__dict__)
        if self.scale == "diff" and per:
            for k in ("point", "se", "ci_low", "ci_high"):
                d[f"{k}_per100k"] = d[k] * per
        return d


def wald_ci(point: float, se: float, z: float = Z975):
    """``(point - z se, point + z se)``."""
    if se < 0:
        raise ValueError("se must be nonnegative")
    return point - z * se, point + z * se


def theta_test(theta_hat: float, se: float) -> float:
    """Two-sided normal p-value for ``theta = 0``.

    >>> round(theta_test(1.0, 0.5), 4)
    0.0455
    """
    if not se > 0:
        raise ValueError("se must be positive")
    return float(2.0 * norm.sf(abs(theta_hat / se)))


def resample_indices(n: int, seed: int, rep: int) -> np.ndarray:
    """Row indices of bootstrap replicate ``rep``; independent of run order."""
    return stream(seed, "bootstrap", rep).integers(0, n, size=n)


@dataclass
class BootstrapResult:
    """Replicate outputs in index order; ``None`` marks a failed replicate."""

    replicates: List[object]
    failures: Dict[int, str]
    n_reps: int
    seed: int

    @property
    def ok(self):
        return [r for r in self.replicates if r is not None]

    @property
    def n_failed(self):
        return len(self.failures)


def bootstrap(data, pipeline: Callable, plan: BootstrapPlan, threads: Optional[int] = None
              ) -> BootstrapResult:
    """Rerun ``pipeline`` on ``plan.n_reps`` row resamples of ``data``.

    ``pipeline(dataset)`` may return anything; replicates raising one of
    :data:`REPLICATE_ERRORS` are dropped and reported. The result is
    identical for any ``threads``.

    Raises
    ------
    BootstrapError
        If more than 10% of replicates fail.
    """
    if data.n < 2:
        raise ValueError("bootstrap needs at least two rows")
    threads = default_threads() if threads is None else threads

    def one(rep):
        idx = resample_indices(data.n, plan.seed, rep)
        try:
            return pipeline(data.take(idx)), None
        except REPLICATE_ERRORS as exc:
            return None, f"{type(exc).__name__}: {exc}"

    reps = range(plan.n_reps)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            outcomes = list(pool.map(one, reps))
    else:
        outcomes = [one(r) for r in reps]
    failures = {i: msg for i, (_, msg) in enumerate(outcomes) if msg is not None}
    if len(failures) > MAX_FAILURE_FRACTION * plan.n_reps:
        sample = "; ".join(f"#{i}: {m}" for i, m in list(failures.items())[:3])
        raise BootstrapError(f"{len(failures)} of {plan.n_reps} bootstrap replicates failed ({sample})")
    if failures:
        log.warning("%d bootstrap replicates failed and were dropped", len(failures))
    return BootstrapResult([r for r, _ in outcomes], failures, plan.n_reps, plan.seed)


def summarize(point: float, values: Sequence[float]):
    """``(se, ci_low, ci_high)`` from replicate values (SD with ddof 1)."""
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    if len(v) < 2:
        return math.nan, math.nan, math.nan
    se = float(np.std(v, ddof=1))
    lo, hi = wald_ci(point, se)
    return se, lo, hi


def estimate_table(points: Mapping[Hashable, float], replicate_values: Sequence[Mapping],
                   plan: BootstrapPlan) -> List[EffectEstimate]:
    """Combine point estimates keyed ``(estimand, scale, method)`` with replicates."""
    out = []
    for key, point in points.items():
        vals = [r.get(key) for r in replicate_values if r is not None]
        se, lo, hi = summarize(point, vals)
        out.append(EffectEstimate(key[0], key[1], key[2], point, se, lo, hi,
                                  sum(v is not None for v in vals), plan.seed))
    return out
