import io
import math

import numpy as np
import pytest

from sface.identification import ComponentSet, sface_diff, sface_rr
from sface.rng import stream
from sface.simulation import (FIXTURE_N, STUDY_I, STUDY_II_PATH, DGMParams, InfeasibleParamsError,
                              MetricsRow, SimRecord, StudySpec, aggregate, arm_probabilities,
                              draw_potential_outcomes, fixture_dataset, run_study,
                              simulate_population, true_effects, write_metrics_csv)

NULL = DGMParams(beta1=0.0, beta2=0.0)


def test_null_exposure_effect_gives_identical_potential_outcomes() -> None:
    _, po = simulate_population(NULL, 50_000, seed=1)
    assert np.array_equal(po.y0, po.y1)


def test_null_exposure_effect_truths() -> None:
    t = true_effects(NULL, 200_000, seed=1)
    for k in (1, 2):
        assert t["SFACE%d" % k, "diff"] == 0.0
        assert t["SFACE%d" % k, "rr"] == 1.0
        assert t["TE%d" % k, "diff"] == 0.0


def test_s_monotonicity_holds_for_every_unit() -> None:
    for seed in range(3):
        _, po = simulate_population(STUDY_I, 200_000, seed=seed)
        cases0 = po.y0 > 0
        assert np.all(po.y1[cases0] == po.y0[cases0])


def test_exposure_prevalence() -> None:
    data, _ = simulate_population(STUDY_I, 1_000_000, seed=2)
    assert abs(data.exposure.mean() - 0.49) < 0.01


def test_study_one_subtype_prevalence() -> None:
    data, _ = simulate_population(STUDY_I, 1_000_000, seed=2)
    prev1, prev2 = (float(np.mean(data.outcome == k)) for k in (1, 2))
    print(f"subtype prevalence: {prev1:.4f} {prev2:.4f}")
    assert 0.05 <= prev1 <= 0.06
    assert 0.02 <= prev2 <= 0.04


def test_adjusted_draw_recovers_exposed_marginals() -> None:
    n = 1_000_000
    for x1, x2, u in ((1.0, 1.0, 1.0), (0.0, -0.5, 0.3), (1.0, 2.0, -1.0)):
        _, r1, r2 = arm_probabilities(STUDY_I, 1.0, x1, x2, u)
        _, y1 = draw_potential_outcomes(STUDY_I, np.full(n, x1), np.full(n, x2), np.full(n, u),
                                        stream(3, "cell"))
        assert abs(np.mean(y1 == 1) / r1 - 1) < 0.02
        assert abs(np.mean(y1 == 2) / r2 - 1) < 0.02


def test_infeasible_parameters_rejected() -> None:
    with pytest.raises(InfeasibleParamsError, match="U="):
        simulate_population(DGMParams(beta1=-0.5), 1000, seed=1)


def test_identification_on_the_potential_outcome_table() -> None:
    _, po = simulate_population(STUDY_I, 300_000, seed=4)
    c = ComponentSet(*(float(po.indicator(k, a).mean()) for k, a in ((1, 0), (1, 1), (2, 0), (2, 1))))
    for k in (1, 2):
        j = 3 - k
        stratum = (po.indicator(j, 0) == 0) & (po.indicator(j, 1) == 0)
        m1, m0 = po.indicator(k, 1)[stratum].mean(), po.indicator(k, 0)[stratum].mean()
        assert sface_diff(c, subtype=k) == pytest.approx(m1 - m0, abs=1e-12)
        assert sface_rr(c, subtype=k) == pytest.approx(m1 / m0, rel=1e-12)


def test_truth_risk_ratio_equals_total_effect_ratio() -> None:
    t = true_effects(STUDY_I, 500_000, seed=6)
    for k in (1, 2):
        assert t["SFACE%d" % k, "rr"] == pytest.approx(t["TE%d" % k, "rr"], rel=1e-12)
        assert t.mc_se["SFACE%d" % k, "diff"] > 0


def test_truth_is_chunk_invariant() -> None:
    a = true_effects(STUDY_I, 300_000, seed=9, chunk=100_000)
    b = true_effects(STUDY_I, 300_000, seed=9, chunk=100_000)
    assert a.values == b.values


def test_with_path_addresses_vector_components() -> None:
    p = STUDY_I.with_path("gamma2[1]", 1.5)
    assert p.gamma2 == (STUDY_I.gamma2[0], 1.5)
    assert STUDY_I.with_path("delta2", 0.0).delta2 == 0.0


def test_study_spec_checks() -> None:
    with pytest.raises(ValueError):
        StudySpec("I", misspec="outcome")
    with pytest.raises(ValueError):
        StudySpec("IV")
    with pytest.raises(ValueError):
        StudySpec(boot_reps=1)
    spec = StudySpec("II")
    assert spec.sweep == STUDY_II_PATH
    assert [round(math.exp(v)) for v, _ in spec.points(STUDY_I)] == [2, 3, 4, 5, 6]


class _Truth:
    def __init__(self, values):
        self.values = values

    def __getitem__(self, key):
        return self.values[key]


def test_metrics_agree_with_an_independent_pass() -> None:
    rng = np.random.default_rng(0)
    keys = [(f"{p}{k}", s, m) for s in ("diff", "rr") for k in (1, 2)
            for p, m in (("SFACE", "stand"), ("SFACE", "iptw"), ("SFACE", "dr"),
                         ("TE", "stand"), ("Conditional", "stand"))]
    records = [SimRecord(i, {key: rng.normal(1.0, 0.2) for key in keys},
                         {key: rng.uniform(0.1, 0.3) for key in keys}) for i in range(40)]
    records.append(SimRecord(40, {}, {}, 0, "FitError: boom"))
    truth = _Truth({(f"SFACE{k}", s): 0.9 + 0.1 * k for k in (1, 2) for s in ("diff", "rr")})
    rows = aggregate(records, truth)
    assert len(rows) == 20
    for row in rows:
        prefix = {"SFACE": "SFACE", "TE": "TE", "Cond": "Conditional"}[row.estimand]
        key = (f"{prefix}{row.subtype}", row.scale, row.method)
        t = truth[f"SFACE{row.subtype}", row.scale]
        est = [r.estimates[key] for r in records[:40]]
        se = [r.se[key] for r in records[:40]]
        mean = sum(est) / len(est)
        sd = math.sqrt(sum((e - mean) ** 2 for e in est) / (len(est) - 1))
        cover = sum(abs(e - t) <= 1.959964 * s for e, s in zip(est, se)) / len(est)
        assert row.n_ok == 40
        assert row.bias == pytest.approx(mean - t, abs=1e-14)
        assert row.pct_bias == pytest.approx(100 * (mean - t) / t, abs=1e-12)
        assert row.emp_sd == pytest.approx(sd, rel=1e-12)
        assert row.mean_est_se == pytest.approx(sum(se) / len(se), rel=1e-12)
        assert row.cp95 == cover
        assert 0 <= row.cp95 <= 1


def test_scaled_rows_only_touch_the_difference_scale() -> None:
    row = MetricsRow("SFACE", 1, "dr", "diff", 0.0347, 0.0001, 0.3, 0.95, 0.002, 0.0021, 10)
    s = row.scaled()
    assert s.truth == pytest.approx(3470.0) and s.pct_bias == 0.3 and s.cp95 == 0.95
    rr = MetricsRow("SFACE", 1, "dr", "rr", 1.7, 0.01, 0.6, 0.95, 0.1, 0.1, 10)
    assert rr.scaled() is rr


def test_small_study_is_deterministic_and_thread_independent() -> None:
    spec = StudySpec("I", n=2000, n_sims=3, boot_reps=4, seed=3, n_mc=100_000)
    a = run_study(spec, threads=1)
    b = run_study(spec, threads=2)
    assert a.rows == b.rows
    buf = io.StringIO()
    write_metrics_csv(a.rows, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == 1 + 5 * 2 * 2
    assert all(r.n_ok == 3 for r in a.rows)


def test_fixture_matches_the_bundled_file() -> None:
    from importlib import resources
    from sface.data import Schema, load_csv
    with resources.as_file(resources.files("sface.fixtures") / "cohort200.csv") as path:
        bundled = load_csv(path, Schema("A", "Y", ("X1", "X2")))
    fresh = fixture_dataset()
    assert bundled.n == FIXTURE_N
    assert bundled.equals(fresh)
    assert set(np.unique(fresh.outcome)) == {0, 1, 2, 9}
