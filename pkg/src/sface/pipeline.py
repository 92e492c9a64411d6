"""One full analysis pass: weighting, nuisance fits, components, effects.

:func:`analyze` is the closure the bootstrap reruns on every resample. Its
output, an :class:`Analysis`, holds everything that does not depend on the
sensitivity parameters; :func:`effects` turns it into named estimates for a
given :class:`~sface.identification.SensitivityParams`.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

from .data import Dataset, MissingnessModelSpec, MissingnessSummary, fit_missingness_weights
from .estimators import (CLIP, Method, arm_predictions, clipped_propensity,
                         components_dr, components_iptw, components_standardization,
                         conditional_estimand)
from .glm import ExposureModelFit, OutcomeModelFit, fit_exposure_model, fit_multinomial
from .identification import ZERO, ComponentSet, SensitivityParams, sface, te, theta

ESTIMANDS = ("SFACE1", "SFACE2", "Theta", "TE1", "TE2", "Conditional1", "Conditional2")
SCALES = ("diff", "rr")


@dataclass(frozen=True)
class AnalysisConfig:
    """What to estimate and how.

    ``missingness=None`` means the data carry no unknown-subtype rows (or
    their weights are already applied).
    """

    methods: Tuple[Method, ...] = (Method.STANDARDIZATION, Method.IPTW, Method.DR)
    augmentation: str = "unit"
    literal_a0: bool = False
    clip: Tuple[float, float] = CLIP
    missingness: Optional[MissingnessModelSpec] = None
    conditional: bool = True

    def __post_init__(self):
        methods = tuple(dict.fromkeys(Method.parse(m) for m in self.methods))
        if not methods:
            raise ValueError("at least one method is required")
        object.__setattr__(self, "methods", methods)
        if self.augmentation not in ("mean", "unit"):
            raise ValueError(f"augmentation must be 'mean' or 'unit', got {self.augmentation!r}")

    @property
    def needs_outcome_model(self):
        return self.conditional or any(m.needs_outcome_model for m in self.methods)

    @property
    def needs_exposure_model(self):
        return any(m.needs_exposure_model for m in self.methods)


@dataclass(frozen=True)
class Analysis:
    components: Dict[Method, ComponentSet]
    conditional: Dict[Tuple[int, str], float] = field(default_factory=dict)
    fit_y: Optional[OutcomeModelFit] = None
    fit_a: Optional[ExposureModelFit] = None
    n_clipped: int = 0
    missingness: Optional[MissingnessSummary] = None
    n_analysed: int = 0


def analyze(data: Dataset, config: AnalysisConfig, *, start_y=None, start_a=None) -> Analysis:
    """Run weighting, both fits and every requested component estimator.

    ``start_y``/``start_a`` warm-start the Newton iterations (the bootstrap
    passes the full-data fits); the converged solution does not depend on it
    beyond the solver tolerance.
    """
    summary = None
    if config.missingness is not None:
        data, summary = fit_missingness_weights(data, config.missingness)
    fit_y = fit_multinomial(data, start=start_y) if config.needs_outcome_model else None
    fit_a = fit_exposure_model(data, start=start_a) if config.needs_exposure_model else None
    preds = arm_predictions(fit_y, data) if fit_y is not None else None
    prop = clipped_propensity(fit_a, data, config.clip) if fit_a is not None else None
    comps = {}
    for m in config.methods:
        if m is Method.STANDARDIZATION:
            comps[m] = components_standardization(fit_y, data, preds)
        elif m is Method.IPTW:
            comps[m] = components_iptw(prop, data)
        else:
            comps[m] = components_dr(fit_y, prop, data, augmentation=config.augmentation,
                                     literal_a0=config.literal_a0, preds=preds)
    cond = {}
    if config.conditional:
        for k in (1, 2):
            for s in SCALES:
                cond[k, s] = conditional_estimand(fit_y, data, k, s, preds)
    return Analysis(comps, cond, fit_y, fit_a, prop.n_clipped if prop else 0, summary, data.n)


def effects(analysis: Analysis, params: SensitivityParams = ZERO, scales=SCALES,
            estimands=ESTIMANDS) -> Dict[Tuple[str, str, str], float]:
    """``{(estimand, scale, method): value}`` for one sensitivity setting.

    The conditional estimands are reported under the standardization label
    since they use the outcome model only. Cells whose identification fails
    (e.g. a sensitivity parameter beyond its admissible range) raise.
    """
    out = {}
    for s in scales:
        for m, c in analysis.components.items():
            e1 = sface(c, params, 1, s)
            e2 = sface(c, params, 2, s)
            vals = {"SFACE1": e1, "SFACE2": e2, "Theta": theta(e1, e2),
                    "TE1": te(c, 1, s), "TE2": te(c, 2, s)}
            for name in estimands:
                if name in vals:
                    out[name, s, m.value] = vals[name]
        for k in (1, 2):
            name = f"Conditional{k}"
            if name in estimands and (k, s) in analysis.conditional:
                out[name, s, Method.STANDARDIZATION.value] = analysis.conditional[k, s]
    return out


@dataclass
class EstimationReport:
    estimates: list
    theta_p: Dict[Tuple[str, str], float]
    analysis: Analysis
    n_boot_failed: int
    params: SensitivityParams


def run_estimation(data: Dataset, config: AnalysisConfig, plan, params: SensitivityParams = ZERO,
                   scales=SCALES, threads=None) -> EstimationReport:
    """Point estimates on ``data`` plus bootstrap SEs, Wald CIs and theta tests.

    With ``plan.refit_missingness`` off, the missing-subtype weights are
    fitted once and the bootstrap resamples the weighted dataset.
    """
    from .inference import bootstrap, estimate_table, theta_test

    full = analyze(data, config)
    boot_data, boot_config = data, config
    if config.missingness is not None and not plan.refit_missingness:
        boot_data, _ = fit_missingness_weights(data, config.missingness)
        boot_config = replace(config, missingness=None)
    points = effects(full, params, scales)

    def replicate(sample):
        return effects(analyze(sample, boot_config, start_y=full.fit_y, start_a=full.fit_a),
                       params, scales)

    boot = bootstrap(boot_data, replicate, plan, threads=threads)
    table = estimate_table(points, boot.ok, plan)
    theta_p = {}
    for est in table:
        if est.estimand == "Theta" and est.se > 0:
            theta_p[est.scale, est.method] = theta_test(est.point, est.se)
    return EstimationReport(table, theta_p, full, boot.n_failed, params)
