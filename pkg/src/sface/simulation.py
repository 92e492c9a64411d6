"""Synthetic populations with known potential outcomes, and simulation studies.

Potential outcomes follow a multinomial logit in ``(a, X1, X2, U)`` with a
latent common cause ``U``. ``Y(1)`` is drawn conditionally on ``Y(0)`` so that
S-Monotonicity holds for both subtypes while each arm keeps its multinomial
marginal. ``X1 ~ Bernoulli(0.5)``, ``X2 ~ N(0, 1)``, ``U ~ N(0, 1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from .data import Dataset
from .rng import stream

LOG = math.log
MISSPEC = ("none", "exposure", "outcome", "both")


class InfeasibleParamsError(ValueError):
    pass


@dataclass(frozen=True)
class DGMParams:
    """Data-generating parameters; defaults are the Study I setting."""

    alpha1: float = LOG(0.05)
    alpha2: float = LOG(0.005)
    beta1: float = LOG(2)
    beta2: float = LOG(2)
    gamma1: tuple = (LOG(0.25), LOG(2))
    gamma2: tuple = (LOG(2), LOG(2))
    delta1: float = LOG(2)
    delta2: float = LOG(2)
    phi: float = LOG(0.7)
    psi: tuple = (LOG(2), LOG(2))

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "psi"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2:
                raise ValueError(f"{name} must have two components")
            object.__setattr__(self, name, v)

    def with_path(self, name: str, value) -> "DGMParams":
        """Copy with one parameter changed; ``"gamma2[1]"`` addresses a component."""
        if "[" in name:
            base, idx = name.rstrip("]").split("[")
            vec = list(getattr(self, base))
            vec[int(idx)] = float(value)
            return replace(self, **{base: tuple(vec)})
        return replace(self, **{name: value})

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


STUDY_I = DGMParams()
# Study II sweeps the second component of gamma2 from log 2 to log 6.
STUDY_II_PATH = ("gamma2[1]", tuple(LOG(v) for v in (2, 3, 4, 5, 6)))


def _outcome_x2(x2, misspec):
    return np.log(np.abs(x2)) if misspec in ("outcome", "both") else x2


def _exposure_x2(x2, misspec):
    return np.log(np.abs(x2)) if misspec in ("exposure", "both") else x2


def arm_probabilities(params: DGMParams, a, x1, x2, u):
    """``(P0, P1, P2)`` of ``Y(a)`` given ``(X, U)``; ``x2`` already transformed."""
    e1 = np.exp(params.alpha1 + params.beta1 * a + params.gamma1[0] * x1
                + params.gamma1[1] * x2 + params.delta1 * u)
    e2 = np.exp(params.alpha2 + params.beta2 * a + params.gamma2[0] * x1
                + params.gamma2[1] * x2 + params.delta2 * u)
    den = 1.0 + e1 + e2
    return 1.0 / den, e1 / den, e2 / den


@dataclass(frozen=True, eq=False)
class PotentialOutcomes:
    y0: np.ndarray
    y1: np.ndarray
    u: np.ndarray

    def indicator(self, k, a):
        return ((self.y1 if a else self.y0) == k).astype(float)


def draw_potential_outcomes(params, x1, x2o, u, rng):
    """Two-stage draw enforcing S-Monotonicity; ``x2o`` is the outcome-scale X2."""
    n = len(x1)
    _, q1, q2 = arm_probabilities(params, 0.0, x1, x2o, u)
    _, r1, r2 = arm_probabilities(params, 1.0, x1, x2o, u)
    free0 = 1.0 - q1 - q2
    adj1 = (r1 - q1) / free0
    adj2 = (r2 - q2) / free0
    bad = (adj1 < -1e-12) | (adj2 < -1e-12) | (adj1 + adj2 > 1 + 1e-12)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise InfeasibleParamsError(
            f"negative adjusted probability at X=({x1[i]:g}, {x2o[i]:g}), U={u[i]:g}: "
            "exposure lowers a subtype risk")
    v0 = rng.random(n)
    y0 = np.where(v0 < q1, 1, np.where(v0 < q1 + q2, 2, 0))
    v1 = rng.random(n)
    y1_new = np.where(v1 < adj1, 1, np.where(v1 < adj1 + adj2, 2, 0))
    y1 = np.where(y0 > 0, y0, y1_new)
    return y0, y1


def simulate_population(params: DGMParams, n: int, seed, misspec: str = "none",
                        rng: Optional[np.random.Generator] = None):
    """Observed :class:`Dataset` and the full potential-outcome table.

    ``misspec`` swaps ``X2`` for ``log|X2|`` in the exposure and/or outcome
    generating models; the returned covariates are always the raw ``X2``.
    """
    if misspec not in MISSPEC:
        raise ValueError(f"misspec must be one of {MISSPEC}")
    rng = stream(seed, "population") if rng is None else rng
    x1 = (rng.random(n) < 0.5).astype(float)
    x2 = rng.standard_normal(n)
    u = rng.standard_normal(n)
    y0, y1 = draw_potential_outcomes(params, x1, _outcome_x2(x2, misspec), u, rng)
    lin = params.phi + params.psi[0] * x1 + params.psi[1] * _exposure_x2(x2, misspec)
    a = (rng.random(n) < 1.0 / (1.0 + np.exp(-lin))).astype(float)
    y = np.where(a == 1, y1, y0)
    data = Dataset(a, np.column_stack([x1, x2]), y, np.ones(n), ("X1", "X2"))
    return data, PotentialOutcomes(y0, y1, u)


# ---------------------------------------------------------------------------
# Ground truth by definition on the potential-outcome table
# ---------------------------------------------------------------------------

@dataclass
class _Tally:
    """Running sums for one subtype's stratum and population contrasts."""

    n: int = 0
    n_s: int = 0
    s1: int = 0
    s0: int = 0
    s10: int = 0
    t1: int = 0
    t0: int = 0
    t10: int = 0

    def add(self, yk0, yk1, yj0, yj1):
        free = (yj0 == 0) & (yj1 == 0)
        self.n += len(yk0)
        self.n_s += int(free.sum())
        self.s1 += int(yk1[free].sum())
        self.s0 += int(yk0[free].sum())
        self.s10 += int((yk1 & yk0)[free].sum())
        self.t1 += int(yk1.sum())
        self.t0 += int(yk0.sum())
        self.t10 += int((yk1 & yk0).sum())


def _contrasts(n, s1, s0, s10):
    """Difference and ratio of two paired Bernoulli means with MC SEs."""
    m1, m0, m10 = s1 / n, s0 / n, s10 / n
    diff = m1 - m0
    var_d = (m1 + m0 - 2 * m10 - diff ** 2) / n
    rr = m1 / m0 if m0 > 0 else math.nan
    if m1 > 0 and m0 > 0:
        var_log = ((1 - m1) / m1 + (1 - m0) / m0 - 2 * (m10 - m1 * m0) / (m1 * m0)) / n
        se_rr = rr * math.sqrt(max(var_log, 0.0))
    else:
        se_rr = math.nan
    return diff, math.sqrt(max(var_d, 0.0)), rr, se_rr


@dataclass(frozen=True)
class TrueEffects:
    """True effects on both scales, with Monte-Carlo standard errors.

    ``values`` and ``mc_se`` are keyed ``(estimand, scale)`` with estimands
    ``SFACE1, SFACE2, Theta, TE1, TE2``. Difference-scale values are raw
    (not per 100,000).
    """

    values: dict
    mc_se: dict
    n_mc: int
    stratum_size: dict

    def __getitem__(self, key):
        return self.values[key]

    def to_rows(self):
        return [dict(estimand=k[0], scale=k[1], value=v, mc_se=self.mc_se[k])
                for k, v in sorted(self.values.items())]


def true_effects(params: DGMParams, n_mc: int, seed, misspec: str = "none",
                 chunk: int = 1_000_000) -> TrueEffects:
    """Monte-Carlo truth from simulated potential outcomes.

    The subtype-k effect is the contrast of ``Y^k(1)`` against ``Y^k(0)``
    among units with ``Y^j(0) = Y^j(1) = 0``; the total effect is the same
    contrast over everyone. Only the outcome side of ``misspec`` matters.
    Memory stays bounded by processing ``chunk`` units at a time.
    """
    if misspec not in MISSPEC:
        raise ValueError(f"misspec must be one of {MISSPEC}")
    tallies = {1: _Tally(), 2: _Tally()}
    done, block = 0, 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        rng = stream(seed, "truth", block)
        x1 = (rng.random(m) < 0.5).astype(float)
        x2 = rng.standard_normal(m)
        u = rng.standard_normal(m)
        y0, y1 = draw_potential_outcomes(params, x1, _outcome_x2(x2, misspec), u, rng)
        ind = {(k, a): ((y1 if a else y0) == k) for k in (1, 2) for a in (0, 1)}
        for k in (1, 2):
            j = 3 - k
            tallies[k].add(ind[k, 0], ind[k, 1], ind[j, 0], ind[j, 1])
        done += m
        block += 1
    values, ses, sizes = {}, {}, {}
    for k, t in tallies.items():
        d, sd, r, sr = _contrasts(t.n_s, t.s1, t.s0, t.s10)
        values[f"SFACE{k}", "diff"], ses[f"SFACE{k}", "diff"] = d, sd
        values[f"SFACE{k}", "rr"], ses[f"SFACE{k}", "rr"] = r, sr
        d, sd, r, sr = _contrasts(t.n, t.t1, t.t0, t.t10)
        values[f"TE{k}", "diff"], ses[f"TE{k}", "diff"] = d, sd
        values[f"TE{k}", "rr"], ses[f"TE{k}", "rr"] = r, sr
        sizes[k] = t.n_s
    for s in ("diff", "rr"):
        values["Theta", s] = values["SFACE1", s] - values["SFACE2", s]
        # conservative: ignores the (positive) correlation between the two
        ses["Theta", s] = math.hypot(ses["SFACE1", s], ses["SFACE2", s])
    return TrueEffects(values, ses, int(n_mc), sizes)


# ---------------------------------------------------------------------------
# Simulation studies
# ---------------------------------------------------------------------------

# (row label, estimand prefix, method) for the five estimators per subtype
ESTIMATORS = (("SFACE", "SFACE", "stand"), ("SFACE", "SFACE", "iptw"), ("SFACE", "SFACE", "dr"),
              ("TE", "TE", "stand"), ("Cond", "Conditional", "stand"))
METRIC_FIELDS = ("bias", "pct_bias", "cp95", "emp_sd", "mean_est_se")


@dataclass(frozen=True)
class StudySpec:
    study: str = "I"
    n: int = 10_000
    n_sims: int = 500
    boot_reps: int = 200
    seed: int = 1
    sweep: Optional[tuple] = None
    misspec: str = "none"
    n_mc: int = 1_000_000

    def __post_init__(self):
        study = str(self.study).upper()
        object.__setattr__(self, "study", study)
        if study not in ("I", "II", "III"):
            raise ValueError(f"study must be I, II or III, got {self.study!r}")
        if self.misspec not in MISSPEC:
            raise ValueError(f"misspec must be one of {MISSPEC}")
        if self.misspec != "none" and study != "III":
            raise ValueError("model misspecification is only part of Study III")
        if study == "II" and self.sweep is None:
            object.__setattr__(self, "sweep", STUDY_II_PATH)
        if self.n < 10 or self.n_sims < 1 or self.boot_reps < 0 or self.n_mc < 1:
            raise ValueError("n, n_sims and n_mc must be positive and boot_reps nonnegative")
        if self.boot_reps == 1:
            raise ValueError("boot_reps must be 0 (no bootstrap) or at least 2")

    def points(self, params: DGMParams):
        """``[(sweep_value or None, params)]`` for every design point."""
        if self.sweep is None:
            return [(None, params)]
        name, values = self.sweep
        return [(float(v), params.with_path(name, v)) for v in values]


@dataclass(frozen=True)
class MetricsRow:
    estimand: str
    subtype: int
    method: str
    scale: str
    truth: float
    bias: float
    pct_bias: float
    cp95: float
    emp_sd: float
    mean_est_se: float
    n_ok: int
    sweep_value: Optional[float] = None

    def scaled(self, per=1e5):
        """Copy with difference-scale quantities multiplied by ``per``."""
        if self.scale != "diff":
            return self
        return replace(self, truth=self.truth * per, bias=self.bias * per,
                       emp_sd=self.emp_sd * per, mean_est_se=self.mean_est_se * per)


@dataclass
class SimRecord:
    """Estimates for one simulated dataset, keyed ``(estimand, scale, method)``."""

    index: int
    estimates: dict
    se: dict
    n_boot_failed: int = 0
    error: Optional[str] = None


def _keys():
    for s in ("diff", "rr"):
        for k in (1, 2):
            for _, prefix, method in ESTIMATORS:
                yield f"{prefix}{k}", s, method


def run_one(params: DGMParams, spec: StudySpec, index: int, config=None) -> SimRecord:
    """Generate dataset ``index`` and estimate everything (with bootstrap)."""
    from .glm import FitError
    from .identification import IdentificationError
    from .inference import BootstrapError, BootstrapPlan, bootstrap
    from .pipeline import AnalysisConfig, analyze, effects

    config = AnalysisConfig() if config is None else config
    # the same stream for every sweep point gives common random numbers
    data, _ = simulate_population(params, spec.n, spec.seed, spec.misspec,
                                  rng=stream(spec.seed, "sim", index))
    wanted = list(_keys())
    try:
        full = analyze(data, config)
        point = {k: v for k, v in effects(full).items() if k in wanted}
        se = {}
        failed = 0
        if spec.boot_reps:
            plan = BootstrapPlan(spec.boot_reps, seed=spec.seed * 1_000_003 + index)
            res = bootstrap(data, lambda b: effects(analyze(b, config, start_y=full.fit_y,
                                                            start_a=full.fit_a)), plan, threads=1)
            failed = res.n_failed
            for key in point:
                vals = np.array([r[key] for r in res.ok])
                se[key] = float(np.std(vals, ddof=1))
        return SimRecord(index, point, se, failed)
    except (FitError, IdentificationError, BootstrapError) as exc:
        return SimRecord(index, {}, {}, 0, f"{type(exc).__name__}: {exc}")


def _run_one_packed(args):
    return run_one(*args)


def aggregate(records: Sequence[SimRecord], truth: TrueEffects, sweep_value=None,
              z: float = 1.959964):
    """Metrics rows (raw scale) from per-dataset records."""
    ok = [r for r in records if r.error is None]
    rows = []
    for est, s, method in _keys():
        subtype = int(est[-1])
        t = truth[f"SFACE{subtype}", s]
        vals = np.array([r.estimates[est, s, method] for r in ok])
        label = est[:-1] if not est.startswith("Conditional") else "Cond"
        if len(vals) == 0:
            rows.append(MetricsRow(label, subtype, method, s, t, *([math.nan] * 5), 0, sweep_value))
            continue
        bias = float(vals.mean() - t)
        emp_sd = float(vals.std(ddof=1)) if len(vals) > 1 else math.nan
        ses = np.array([r.se.get((est, s, method), math.nan) for r in ok])
        if np.all(np.isfinite(ses)):
            cp = float(np.mean(np.abs(vals - t) <= z * ses))
            mean_se = float(ses.mean())
        else:
            cp = mean_se = math.nan
        rows.append(MetricsRow(label, subtype, method, s, t, bias, 100.0 * bias / t, cp,
                               emp_sd, mean_se, len(vals), sweep_value))
    return rows


@dataclass
class StudyResult:
    spec: StudySpec
    rows: List[MetricsRow]
    truths: list
    records: list
    n_failed: int = 0


def run_study(spec: StudySpec, params: DGMParams = STUDY_I, *, config=None,
              threads: int = 1) -> StudyResult:
    """Run every design point of ``spec``; results do not depend on ``threads``."""
    rows, truths, records, n_failed = [], [], [], 0
    for value, p in spec.points(params):
        truth = true_effects(p, spec.n_mc, spec.seed, spec.misspec)
        jobs = [(p, spec, i, config) for i in range(spec.n_sims)]
        if threads > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(threads) as pool:
                recs = list(pool.map(_run_one_packed, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
        else:
            recs = [run_one(*job) for job in jobs]
        n_failed += sum(r.error is not None for r in recs)
        rows.extend(aggregate(recs, truth, value))
        truths.append((value, truth))
        records.append((value, recs))
    return StudyResult(spec, rows, truths, records, n_failed)


METRICS_HEADER = ("sweep_value", "subtype", "estimand", "method", "scale", "truth", "bias",
                  "pct_bias", "cp95", "emp_sd", "mean_est_se", "n_ok")


def write_metrics_csv(rows: Sequence[MetricsRow], path_or_buffer, per: float = 1e5):
    """Tidy metrics table; difference-scale quantities per ``per`` people."""
    import csv
    import io

    own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            r = r.scaled(per)
            w.writerow(["" if r.sweep_value is None else f"{r.sweep_value:.6g}", r.subtype,
                        r.estimand, r.method, r.scale]
                       + [_fmt(getattr(r, f)) for f in ("truth",) + METRIC_FIELDS] + [r.n_ok])
    finally:
        if own:
            fh.close()


def _fmt(x):
    return "nan" if not math.isfinite(x) else f"{x:.6g}"


# Parameters of the bundled example dataset: common subtypes so that 200
# rows carry enough cases of each.
FIXTURE_PARAMS = DGMParams(alpha1=LOG(0.4), alpha2=LOG(0.3))
FIXTURE_SEED = 20240611
FIXTURE_N = 200


def fixture_dataset(n: int = FIXTURE_N, seed: int = FIXTURE_SEED) -> Dataset:
    """Small example cohort with some unknown-subtype cases (code 9).

    Subtype availability depends on ``X1``: about 90% of cases are typed when
    ``X1 = 1`` and 75% when ``X1 = 0``.
    """
    rng = stream(seed, "fixture")
    data, _ = simulate_population(FIXTURE_PARAMS, n, seed, rng=rng)
    x1 = data.covariates[:, 0]
    cases = data.outcome > 0
    typed = rng.random(n) < np.where(x1 == 1, 0.9, 0.75)
    y = np.where(cases & ~typed, 9, data.outcome)
    x2 = np.round(data.covariates[:, 1], 4)
    return Dataset(data.exposure, np.column_stack([x1, x2]), y, np.ones(n), ("X1", "X2"))
