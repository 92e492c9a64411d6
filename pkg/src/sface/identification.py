"""Closed-form effects from the four counterfactual marginals.

Everything here is a function of a :class:`ComponentSet`
``p_k(a) = P[Y^(k)(a) = 1]`` and, where monotonicity is relaxed, of the
subtype-switching probabilities ``lambda1`` (1 -> 2), ``lambda2`` (2 -> 1) and
the "disease prevented" probabilities ``lambda1_0``, ``lambda2_0``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .profiles import Assumption, AssumptionCombo

SIMPLEX_SLACK = 0.01


class IdentificationError(ValueError):
    """Effect not defined for the supplied components/parameters."""


class DomainWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ComponentSet:
    p1_0: float
    p1_1: float
    p2_0: float
    p2_1: float

    def __post_init__(self):
        vals = self.as_tuple()
        if not all(math.isfinite(v) for v in vals):
            raise IdentificationError(f"non-finite component in {vals}")
        worst = max([max(-v, v - 1.0) for v in vals]
                    + [self.p1_0 + self.p2_0 - 1.0, self.p1_1 + self.p2_1 - 1.0])
        if worst > SIMPLEX_SLACK:
            raise IdentificationError(
                f"components {vals} leave the probability simplex by {worst:.3g}")
        if worst > 0:
            warnings.warn(f"components leave the simplex by {worst:.2g} (estimation noise)",
                          DomainWarning, stacklevel=3)

    def p(self, k, a):
        return getattr(self, f"p{k}_{a}")

    def as_tuple(self):
        return (self.p1_0, self.p1_1, self.p2_0, self.p2_1)

    def to_dict(self):
        return dict(zip(("p1_0", "p1_1", "p2_0", "p2_1"), self.as_tuple()))


@dataclass(frozen=True)
class SensitivityParams:
    lambda1: float = 0.0
    lambda2: float = 0.0
    lambda1_0: float = 0.0
    lambda2_0: float = 0.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} is outside [0, 1]")

    def switching(self, k):
        return self.lambda1 if k == 1 else self.lambda2

    def prevented(self, k):
        return self.lambda1_0 if k == 1 else self.lambda2_0


ZERO = SensitivityParams()


def validate_against(params: SensitivityParams, combo: AssumptionCombo) -> SensitivityParams:
    """Check the zero constraints implied by ``combo``.

    S-Monotonicity for subtype k forces ``lambda_k = lambda_k_0 = 0``;
    D-Monotonicity forces ``lambda_k_0 = 0``.
    """
    for k in (1, 2):
        a = combo[k]
        if a is Assumption.SMONO and params.switching(k) != 0:
            raise ValueError(f"S-Monotonicity for subtype {k} requires lambda{k} = 0")
        if a in (Assumption.SMONO, Assumption.DMONO) and params.prevented(k) != 0:
            raise ValueError(f"{a.name} for subtype {k} requires lambda{k}_0 = 0")
    return params


def _other(k):
    if k not in (1, 2):
        raise ValueError(f"subtype must be 1 or 2, got {k!r}")
    return 3 - k


def sface_diff(c: ComponentSet, params: SensitivityParams = ZERO, subtype: int = 1) -> float:
    """Subtype-free effect on the difference scale, no monotonicity assumed.

    For subtype 1::

        (p1_1 + (l1 - 1) p1_0 - l2 p2_0) / (1 - p2_1 - l2 p2_0 - l2_0 p2_0)

    and the mirror image for subtype 2. Assumption combos enter only through
    which parameters are forced to zero.
    """
    k, j = subtype, _other(subtype)
    lk, lj, lj0 = params.switching(k), params.switching(j), params.prevented(j)
    num = c.p(k, 1) + (lk - 1.0) * c.p(k, 0) - lj * c.p(j, 0)
    den = 1.0 - c.p(j, 1) - lj * c.p(j, 0) - lj0 * c.p(j, 0)
    if not den > 0:
        raise IdentificationError(
            f"principal stratum probability {den:.4g} <= 0 for subtype {k}: "
            f"lambda{j}={lj} / lambda{j}_0={lj0} are incompatible with the components")
    return num / den


def sface_diff_dmono(c: ComponentSet, lambda1: float, lambda2: float, subtype: int = 1) -> float:
    """D-Monotonicity form (no ``lambda_0`` terms)."""
    if subtype == 1:
        return (c.p1_1 + (lambda1 - 1.0) * c.p1_0 - lambda2 * c.p2_0) / (
            1.0 - c.p2_1 - lambda2 * c.p2_0)
    return (c.p2_1 + (lambda2 - 1.0) * c.p2_0 - lambda1 * c.p1_0) / (
        1.0 - c.p1_1 - lambda1 * c.p1_0)


def sface_diff_smono(c: ComponentSet, subtype: int = 1) -> float:
    """S-Monotonicity for both subtypes."""
    if subtype == 1:
        return (c.p1_1 - c.p1_0) / (1.0 - c.p2_1)
    return (c.p2_1 - c.p2_0) / (1.0 - c.p1_1)


def sface_rr(c: ComponentSet, params: SensitivityParams = ZERO, subtype: int = 1) -> float:
    """Subtype-free effect on the risk-ratio scale (valid without monotonicity).

    ``(p_k(1) - l_j p_j(0)) / ((1 - l_k) p_k(0))``; the ``lambda_0`` terms do not
    enter.
    """
    k, j = subtype, _other(subtype)
    lk, lj = params.switching(k), params.switching(j)
    den = (1.0 - lk) * c.p(k, 0)
    if not den > 0:
        raise IdentificationError(f"RR denominator (1 - lambda{k}) p{k}_0 = {den:.4g} is not positive")
    num = c.p(k, 1) - lj * c.p(j, 0)
    if num < 0:
        warnings.warn(f"negative RR numerator for subtype {k}: lambda{j} exceeds its bound",
                      DomainWarning, stacklevel=2)
    return num / den


def te(c: ComponentSet, subtype: int = 1, scale: str = "diff") -> float:
    """Total effect ``p_k(1) - p_k(0)`` or ``p_k(1) / p_k(0)``."""
    _other(subtype)
    p1, p0 = c.p(subtype, 1), c.p(subtype, 0)
    if scale == "diff":
        return p1 - p0
    if scale == "rr":
        if not p0 > 0:
            raise IdentificationError(f"p{subtype}_0 must be positive for the RR total effect")
        return p1 / p0
    raise ValueError(f"unknown scale {scale!r}")


def sface(c: ComponentSet, params: SensitivityParams = ZERO, subtype: int = 1,
          scale: str = "diff") -> float:
    if scale == "diff":
        return sface_diff(c, params, subtype)
    if scale == "rr":
        return sface_rr(c, params, subtype)
    raise ValueError(f"unknown scale {scale!r}")


def theta(e1: float, e2: float) -> float:
    """Heterogeneity contrast between the two subtype effects (same scale)."""
    return e1 - e2


def lambda_bounds(c: ComponentSet):
    """Data-driven upper bounds ``(min(1, p1_1/p2_0), min(1, p2_1/p1_0))``."""
    if not (c.p2_0 > 0 and c.p1_0 > 0):
        raise IdentificationError("lambda bounds need p1_0 > 0 and p2_0 > 0")
    return min(1.0, c.p1_1 / c.p2_0), min(1.0, c.p2_1 / c.p1_0)
