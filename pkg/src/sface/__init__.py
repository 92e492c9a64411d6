"""Subtype-free average causal effects for two mutually exclusive disease subtypes.

Typical use::

    from sface import load_csv, Schema, AnalysisConfig, BootstrapPlan, run_estimation
    data = load_csv("cohort.csv", Schema("A", "Y", ("X1", "X2")))
    report = run_estimation(data, AnalysisConfig(), BootstrapPlan(200, seed=1))
"""
__version__ = "0.1.0"

from .data import (DataError, Dataset, MissingnessModelSpec, Schema, fit_missingness_weights,
                   load_csv, missingness_weights)
from .estimators import (Method, components_dr, components_iptw, components_standardization,
                         conditional_estimand)
from .glm import (FitError, fit_exposure_model, fit_logistic, fit_multinomial, predict_e,
                  predict_pi)
from .identification import (ComponentSet, IdentificationError, SensitivityParams, lambda_bounds,
                             sface, sface_diff, sface_rr, te, theta)
from .inference import BootstrapPlan, EffectEstimate, bootstrap, theta_test, wald_ci
from .pipeline import AnalysisConfig, analyze, effects, run_estimation
from .profiles import Assumption, AssumptionCombo, compatible_profiles, feasible_profiles
from .sensitivity import GridSpec, run_grid, significance_partition
from .simulation import DGMParams, StudySpec, run_study, simulate_population, true_effects
