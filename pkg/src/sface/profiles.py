"""Potential-outcome profiles and monotonicity assumptions.

A profile is the quadruple ``(Y1(0), Y1(1), Y2(0), Y2(1))``. Feasibility and
compatibility are decided by brute force over all 16 binary quadruples; the
only fixed table here is the conventional numbering of the nine profiles.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import FrozenSet, Tuple


class Assumption(str, enum.Enum):
    SMONO = "s"
    DMONO = "d"
    NONE = "n"

    @classmethod
    def parse(cls, token: str) -> "Assumption":
        if isinstance(token, cls):
            return token
        t = token.strip().lower()
        aliases = {"s": cls.SMONO, "smono": cls.SMONO, "s-mono": cls.SMONO,
                   "d": cls.DMONO, "dmono": cls.DMONO, "d-mono": cls.DMONO,
                   "n": cls.NONE, "none": cls.NONE}
        if t not in aliases:
            raise ValueError(f"unknown assumption {token!r}; use s, d or n")
        return aliases[t]


@dataclass(frozen=True)
class AssumptionCombo:
    subtype1: Assumption = Assumption.SMONO
    subtype2: Assumption = Assumption.SMONO

    @classmethod
    def parse(cls, text: str) -> "AssumptionCombo":
        """Parse ``"s,d"``-style tokens (subtype 1 first)."""
        parts = text.split(",")
        if len(parts) != 2:
            raise ValueError(f"combo must have two comma-separated tokens, got {text!r}")
        return cls(Assumption.parse(parts[0]), Assumption.parse(parts[1]))

    def __getitem__(self, k):
        return self.subtype1 if k == 1 else self.subtype2

    def __str__(self):
        return f"{self.subtype1.value},{self.subtype2.value}"


ALL_COMBOS = tuple(AssumptionCombo(a, b) for a in Assumption for b in Assumption)

# Conventional numbering of the nine mutually exclusive profiles.
PROFILE_LABELS: Tuple[Tuple[int, int, int, int], ...] = (
    (0, 0, 0, 0), (0, 0, 0, 1), (0, 0, 1, 0), (0, 1, 0, 0), (1, 0, 0, 0),
    (1, 1, 0, 0), (0, 0, 1, 1), (1, 0, 0, 1), (0, 1, 1, 0),
)


@dataclass(frozen=True)
class Profile:
    id: int
    values: Tuple[int, int, int, int]

    def y(self, k, a):
        """Potential outcome ``Y^(k)(a)``."""
        return self.values[2 * (k - 1) + a]

    def __str__(self):
        return "{" + ", ".join(map(str, self.values)) + "}"


def _mutually_exclusive(q):
    y10, y11, y20, y21 = q
    return not (y10 and y20) and not (y11 and y21)


def _enumerate_profiles():
    valid = [q for q in itertools.product((0, 1), repeat=4) if _mutually_exclusive(q)]
    if sorted(valid) != sorted(PROFILE_LABELS):
        raise AssertionError("profile numbering does not cover the valid quadruples")
    return tuple(Profile(PROFILE_LABELS.index(q), q) for q in sorted(valid, key=PROFILE_LABELS.index))


PROFILES: Tuple[Profile, ...] = _enumerate_profiles()


def _violates(p: Profile, k: int, assumption: Assumption) -> bool:
    if assumption is Assumption.SMONO:
        return p.y(k, 0) == 1 and p.y(k, 1) == 0
    if assumption is Assumption.DMONO:
        return p.y(k, 0) == 1 and p.y(1, 1) == 0 and p.y(2, 1) == 0
    return False


def feasible_profiles(combo: AssumptionCombo) -> FrozenSet[Profile]:
    """Profiles that may exist in a population satisfying ``combo``."""
    return frozenset(p for p in PROFILES
                     if not _violates(p, 1, combo.subtype1) and not _violates(p, 2, combo.subtype2))


def feasible_ids(combo: AssumptionCombo) -> FrozenSet[int]:
    return frozenset(p.id for p in feasible_profiles(combo))


def compatible_profiles(observed, combo: AssumptionCombo) -> FrozenSet[int]:
    """Ids of feasible profiles consistent with an observed ``(A, Y1, Y2)``."""
    a, y1, y2 = (int(v) for v in observed)
    if a not in (0, 1) or y1 not in (0, 1) or y2 not in (0, 1):
        raise ValueError(f"observation must be binary, got {observed!r}")
    if y1 == 1 and y2 == 1:
        raise ValueError("inconsistent observation: both subtypes equal 1")
    return frozenset(p.id for p in feasible_profiles(combo)
                     if p.y(1, a) == y1 and p.y(2, a) == y2)


OBSERVATIONS = ((0, 0, 0), (0, 1, 0), (0, 0, 1), (1, 0, 0), (1, 1, 0), (1, 0, 1))


def feasibility_table(combos=ALL_COMBOS):
    """Rows ``(profile, {combo: bool})`` for every profile."""
    return [(p, {c: p in feasible_profiles(c) for c in combos}) for p in PROFILES]


def compatibility_table(combos=ALL_COMBOS):
    return [(obs, {c: sorted(compatible_profiles(obs, c)) for c in combos})
            for obs in OBSERVATIONS]
