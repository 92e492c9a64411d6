"""Estimators of the counterfactual marginals ``P[Y^(k)(a) = 1]``.

All averages are weighted by ``Dataset.weight`` and normalised by the total
weight, so missing-subtype weights propagate uniformly.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np

from .glm import ExposureModelFit, OutcomeModelFit, predict_e, predict_pi
from .identification import ComponentSet, IdentificationError

log = logging.getLogger(__name__)

CLIP = (0.01, 0.99)


class Method(str, enum.Enum):
    STANDARDIZATION = "stand"
    IPTW = "iptw"
    DR = "dr"

    @classmethod
    def parse(cls, token):
        if isinstance(token, cls):
            return token
        t = str(token).strip().lower()
        aliases = {"stand": cls.STANDARDIZATION, "standardization": cls.STANDARDIZATION,
                   "iptw": cls.IPTW, "dr": cls.DR, "aipw": cls.DR}
        if t not in aliases:
            raise ValueError(f"unknown method {token!r}; use stand, iptw or dr")
        return aliases[t]

    @property
    def needs_outcome_model(self):
        return self is not Method.IPTW

    @property
    def needs_exposure_model(self):
        return self is not Method.STANDARDIZATION


@dataclass(frozen=True)
class Propensity:
    """Clipped propensity scores and how many were clipped."""

    e: np.ndarray
    n_clipped: int


def clipped_propensity(fit: ExposureModelFit, data, clip=CLIP) -> Propensity:
    e = predict_e(fit, data.covariates)
    lo, hi = clip
    n_clip = int(np.sum((e < lo) | (e > hi)))
    if n_clip:
        log.info("clipped %d propensity scores to [%g, %g]", n_clip, lo, hi)
    return Propensity(np.clip(e, lo, hi), n_clip)


def _wmean(w, v):
    return float(np.dot(w, v) / w.sum())


def arm_predictions(fit: OutcomeModelFit, data):
    """``{(k, a): pi_k(a, X_i)}`` for every unit."""
    out = {}
    for a in (0, 1):
        _, p1, p2 = predict_pi(fit, np.full(data.n, a), data.covariates)
        out[1, a], out[2, a] = p1, p2
    return out


def components_standardization(fit: OutcomeModelFit, data, preds=None) -> ComponentSet:
    """Average the outcome-model predictions at both exposure levels."""
    preds = arm_predictions(fit, data) if preds is None else preds
    w = data.weight
    return ComponentSet(_wmean(w, preds[1, 0]), _wmean(w, preds[1, 1]),
                        _wmean(w, preds[2, 0]), _wmean(w, preds[2, 1]))


def _propensity(fit_a, data, clip):
    if isinstance(fit_a, Propensity):
        return fit_a
    return clipped_propensity(fit_a, data, clip)


def components_iptw(fit: ExposureModelFit, data, clip=CLIP) -> ComponentSet:
    """Inverse-probability-of-exposure weighted subtype risks."""
    e = _propensity(fit, data, clip).e
    w, a = data.weight, data.exposure
    vals = {}
    for k in (1, 2):
        yk = data.subtype_indicator(k)
        vals[k, 1] = _wmean(w, a * yk / e)
        vals[k, 0] = _wmean(w, (1.0 - a) * yk / (1.0 - e))
    return ComponentSet(vals[1, 0], vals[1, 1], vals[2, 0], vals[2, 1])


def components_dr(fit_y: OutcomeModelFit, fit_a: ExposureModelFit, data, *,
                  augmentation: str = "unit", literal_a0: bool = False, clip=CLIP,
                  preds=None) -> ComponentSet:
    """Augmented IPTW marginals.

    ``augmentation="unit"`` uses each unit's own prediction ``pi_k(a, X_i)``
    (the usual AIPW form). ``augmentation="mean"`` replaces it by the sample
    mean prediction ``m_ka``; that variant is consistent under a correct
    propensity model only. ``literal_a0`` uses the ``a = 1`` predictions in
    the unexposed-arm augmentation term.
    """
    if augmentation not in ("mean", "unit"):
        raise ValueError(f"augmentation must be 'mean' or 'unit', got {augmentation!r}")
    e = _propensity(fit_a, data, clip).e
    preds = arm_predictions(fit_y, data) if preds is None else preds
    w, a = data.weight, data.exposure
    vals = {}
    for k in (1, 2):
        yk = data.subtype_indicator(k)
        m1 = preds[k, 1]
        m0 = preds[k, 1] if literal_a0 else preds[k, 0]
        if augmentation == "mean":
            m1 = _wmean(w, m1)
            m0 = _wmean(w, m0)
        vals[k, 1] = _wmean(w, a * yk / e - (a - e) * m1 / e)
        vals[k, 0] = _wmean(w, (1.0 - a) * yk / (1.0 - e) + (a - e) * m0 / (1.0 - e))
    return ComponentSet(vals[1, 0], vals[1, 1], vals[2, 0], vals[2, 1])


def conditional_estimand(fit: OutcomeModelFit, data, subtype: int = 1, scale: str = "diff",
                         preds=None) -> float:
    """Covariate-standardised contrast among units free of the other subtype.

    ``E_X[pi_k(1,X) / (1 - pi_j(1,X))]`` against the same at ``a = 0``, as a
    difference or a ratio. This is not a causal effect.
    """
    if subtype not in (1, 2):
        raise ValueError("subtype must be 1 or 2")
    preds = arm_predictions(fit, data) if preds is None else preds
    j = 3 - subtype
    w = data.weight
    arms = []
    for a in (0, 1):
        den = 1.0 - preds[j, a]
        if np.any(den <= 0):
            raise IdentificationError("other-subtype probability reaches 1")
        arms.append(_wmean(w, preds[subtype, a] / den))
    if scale == "diff":
        return arms[1] - arms[0]
    if scale == "rr":
        return arms[1] / arms[0]
    raise ValueError(f"unknown scale {scale!r}")


def components(method: Method, data, fit_y=None, fit_a=None, *, augmentation="unit",
               literal_a0=False, preds=None) -> ComponentSet:
    method = Method.parse(method)
    if method is Method.STANDARDIZATION:
        if fit_y is None:
            raise ValueError("standardization needs an outcome model")
        return components_standardization(fit_y, data, preds)
    if method is Method.IPTW:
        if fit_a is None:
            raise ValueError("IPTW needs an exposure model")
        return components_iptw(fit_a, data)
    if fit_y is None or fit_a is None:
        raise ValueError("DR needs both models")
    return components_dr(fit_y, fit_a, data, augmentation=augmentation,
                         literal_a0=literal_a0, preds=preds)
