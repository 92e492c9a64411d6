import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sface.identification import (ZERO, ComponentSet, DomainWarning, IdentificationError,
                                  SensitivityParams, lambda_bounds, sface, sface_diff,
                                  sface_diff_dmono, sface_diff_smono, sface_rr, te, theta,
                                  validate_against)
from sface.profiles import ALL_COMBOS, PROFILES, Assumption, AssumptionCombo, feasible_profiles

S, D, N = Assumption.SMONO, Assumption.DMONO, Assumption.NONE
C = ComponentSet(p1_0=0.03, p1_1=0.05, p2_0=0.01, p2_1=0.02)


def random_components(rng):
    """Valid marginals: each arm's two subtype risks sum to at most one."""
    out = []
    for _ in range(2):
        a, b, _ = rng.dirichlet([1.0, 1.0, 2.0])
        out.append((a, b))
    (p1_0, p2_0), (p1_1, p2_1) = out
    return ComponentSet(p1_0, p1_1, p2_0, p2_1)


# ---------------------------------------------------------------------------
# Hand-evaluated examples
# ---------------------------------------------------------------------------

def test_difference_scale_without_switching() -> None:
    assert sface_diff(C) == pytest.approx(0.02 / 0.98, abs=1e-15)
    assert round(sface_diff(C), 7) == 0.0204082


def test_null_effect() -> None:
    c = ComponentSet(0.03, 0.03, 0.01, 0.02)
    assert sface_diff(c) == 0.0


def test_difference_scale_with_switching() -> None:
    got = sface_diff(C, SensitivityParams(lambda1=0.1))
    assert got == pytest.approx(0.023 / 0.98, abs=1e-15)
    assert str(got).startswith("0.0234693")


def test_risk_ratio_examples() -> None:
    assert sface_rr(C) == pytest.approx(0.05 / 0.03, abs=1e-15)
    assert sface_rr(C) == te(C, 1, "rr")
    assert sface_rr(C, SensitivityParams(lambda1=0.5)) == pytest.approx(10 / 3, abs=1e-12)


def test_risk_ratio_numerator_at_bound_is_zero() -> None:
    c = ComponentSet(0.03, 0.005, 0.01, 0.02)
    assert sface_rr(c, SensitivityParams(lambda2=0.5)) == 0.0


def test_risk_ratio_warns_beyond_bound() -> None:
    c = ComponentSet(0.03, 0.005, 0.01, 0.02)
    with pytest.warns(DomainWarning):
        sface_rr(c, SensitivityParams(lambda2=0.8))


def test_total_effects() -> None:
    assert te(C, 1, "diff") == pytest.approx(0.02, abs=1e-17)
    c = ComponentSet(0.04, 0.04, 0.01, 0.01)
    assert te(c, 2, "diff") == 0 and te(c, 2, "rr") == 1


def test_theta_examples() -> None:
    assert theta(0.02, 0.02) == 0
    assert theta(0.0204081, 0.0101010) == pytest.approx(0.0103071, abs=1e-12)
    assert theta(sface_diff(C, ZERO, 1), sface_diff(C, ZERO, 2)) == \
        sface(C, ZERO, 1) - sface(C, ZERO, 2)


def test_lambda_bounds_examples() -> None:
    assert lambda_bounds(C)[0] == 1.0
    assert lambda_bounds(ComponentSet(0.03, 0.005, 0.01, 0.02))[0] == 0.5


def test_nonpositive_stratum_is_an_error() -> None:
    c = ComponentSet(0.3, 0.1, 0.6, 0.4)
    with pytest.raises(IdentificationError, match="lambda2"):
        sface_diff(c, SensitivityParams(lambda2=1.0))


def test_component_simplex_checks() -> None:
    with pytest.raises(IdentificationError):
        ComponentSet(0.6, 0.1, 0.6, 0.1)
    with pytest.warns(DomainWarning):
        ComponentSet(0.5, 0.1, 0.505, 0.1)


def test_validate_against_examples() -> None:
    validate_against(SensitivityParams(lambda1=0.1), AssumptionCombo(D, S))
    with pytest.raises(ValueError):
        validate_against(SensitivityParams(lambda2=0.1), AssumptionCombo(D, S))
    validate_against(SensitivityParams(lambda1_0=0.05), AssumptionCombo(N, D))
    with pytest.raises(ValueError):
        validate_against(SensitivityParams(lambda1_0=0.05), AssumptionCombo(D, N))


# ---------------------------------------------------------------------------
# Brute-force oracle on finite populations
# ---------------------------------------------------------------------------

def random_population(rng, combo):
    """Rows ``(Y1(0), Y1(1), Y2(0), Y2(1))`` of a population satisfying ``combo``."""
    feasible = sorted(feasible_profiles(combo), key=lambda p: p.id)
    counts = rng.integers(0, 40, len(feasible))
    counts[[p.id for p in feasible].index(0)] += 1  # keep both strata non-empty
    return np.repeat(np.array([p.values for p in feasible]), counts, axis=0)


def by_definition(pop, k):
    """Stratum contrasts counted directly from the potential outcomes."""
    yk0, yk1 = pop[:, 2 * (k - 1)], pop[:, 2 * (k - 1) + 1]
    j = 3 - k
    stratum = (pop[:, 2 * (j - 1)] == 0) & (pop[:, 2 * (j - 1) + 1] == 0)
    m1, m0 = yk1[stratum].mean(), yk0[stratum].mean()
    return m1 - m0, (m1 / m0 if m0 > 0 else math.nan)


def counted_inputs(pop):
    """True marginals and switching/prevention probabilities by counting."""
    y = {(k, a): pop[:, 2 * (k - 1) + a] for k in (1, 2) for a in (0, 1)}
    c = ComponentSet(*(float(y[k, a].mean()) for k, a in ((1, 0), (1, 1), (2, 0), (2, 1))))
    lam = {}
    for k in (1, 2):
        j = 3 - k
        base = y[k, 0] == 1
        if base.any():
            lam[k] = float(np.mean(y[j, 1][base] == 1))
            lam[k, 0] = float(np.mean((y[k, 1][base] == 0) & (y[j, 1][base] == 0)))
        else:
            lam[k] = lam[k, 0] = 0.0
    return c, SensitivityParams(lam[1], lam[2], lam[1, 0], lam[2, 0])


@pytest.mark.parametrize("combo", ALL_COMBOS, ids=str)
def test_formulas_match_definition_on_finite_populations(combo) -> None:
    rng = np.random.default_rng(ALL_COMBOS.index(combo))
    for _ in range(200):
        pop = random_population(rng, combo)
        c, params = counted_inputs(pop)
        validate_against(params, combo)
        for k in (1, 2):
            diff, rr = by_definition(pop, k)
            assert abs(sface_diff(c, params, k) - diff) < 1e-12
            if math.isfinite(rr) and params.switching(k) < 1:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", DomainWarning)
                    assert abs(sface_rr(c, params, k) - rr) < 1e-12 * max(1.0, rr)


# ---------------------------------------------------------------------------
# Reductions and structural properties
# ---------------------------------------------------------------------------

def test_reduction_chain_is_exact() -> None:
    rng = np.random.default_rng(1)
    for _ in range(1000):
        c = random_components(rng)
        l1, l2 = rng.uniform(0, 0.5, 2)
        for k in (1, 2):
            if 1 - c.p(3 - k, 1) - (l2 if k == 1 else l1) * c.p(3 - k, 0) <= 0:
                continue
            expected = sface_diff_dmono(c, l1, l2, k)
            assert sface_diff(c, SensitivityParams(l1, l2), k) == expected
            assert sface_diff(c, ZERO, k) == sface_diff_smono(c, k)
            assert sface_rr(c, ZERO, k) == te(c, k, "rr")


def test_increasing_in_own_switching_probability() -> None:
    rng = np.random.default_rng(2)
    for _ in range(200):
        c = random_components(rng)
        vals = [sface_diff(c, SensitivityParams(lambda1=l), 1) for l in np.linspace(0, 1, 11)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


@settings(max_examples=200, deadline=None)
@given(p=st.tuples(*[st.floats(0.01, 0.45)] * 4), s=st.floats(0.05, 1.0))
def test_risk_ratio_is_scale_free(p, s) -> None:
    c = ComponentSet(*p)
    scaled = ComponentSet(*(s * v for v in p))
    for k in (1, 2):
        assert sface_rr(scaled, ZERO, k) == pytest.approx(sface_rr(c, ZERO, k), rel=1e-12)


def test_mirror_symmetry() -> None:
    rng = np.random.default_rng(3)
    for _ in range(100):
        c = random_components(rng)
        swapped = ComponentSet(c.p2_0, c.p2_1, c.p1_0, c.p1_1)
        params = SensitivityParams(*rng.uniform(0, 0.3, 4))
        mirror = SensitivityParams(params.lambda2, params.lambda1, params.lambda2_0, params.lambda1_0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DomainWarning)
            assert sface_diff(c, params, 1) == sface_diff(swapped, mirror, 2)
            assert sface_rr(c, params, 2) == sface_rr(swapped, mirror, 1)
