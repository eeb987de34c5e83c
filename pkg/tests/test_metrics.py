import math
import warnings
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from oracles import ari_pairs, chi2_sf_series, kaplan_meier_loop, nmi_counts
from trajclust.metrics import (adjusted_rand_index, chi2_sf, cluster_survival_report,
                               contingency_table, gamma_q, kaplan_meier, km_curves_csv,
                               logrank_test, nelson_aalen, normalized_mutual_information,
                               overlap_table)

labelings = st.integers(2, 12).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 3), min_size=n, max_size=n),
                        st.lists(st.integers(0, 3), min_size=n, max_size=n)))


# ------------------------------------------------------------------ ARI/NMI

def test_ari_and_nmi_match_oracles_on_200_random_cases():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(2, 13))
        a = rng.integers(0, rng.integers(1, 5), n).tolist()
        b = rng.integers(0, rng.integers(1, 5), n).tolist()
        assert adjusted_rand_index(a, b) == pytest.approx(ari_pairs(a, b), abs=1e-12)
        with _quiet():
            got = normalized_mutual_information(a, b)
        assert got == pytest.approx(nmi_counts(a, b), abs=1e-12)


@contextmanager
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


@given(labelings)
def test_ari_matches_pair_enumeration(pair):
    a, b = pair
    assert adjusted_rand_index(a, b) == pytest.approx(ari_pairs(a, b), abs=1e-12)


@given(labelings)
def test_ari_and_nmi_symmetric(pair):
    a, b = pair
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_index(b, a))
    with _quiet():
        assert normalized_mutual_information(a, b) == pytest.approx(
            normalized_mutual_information(b, a))


@given(st.lists(st.integers(0, 4), min_size=2, max_size=30))
def test_ari_relabel_invariant_and_identity(a):
    perm = {0: 7, 1: 3, 2: 9, 3: 1, 4: 5}
    b = [perm[v] for v in a]
    assert adjusted_rand_index(a, a) == 1.0
    assert adjusted_rand_index(a, b) == pytest.approx(1.0)


def test_ari_worked_example():
    # contingency [[2,1],[0,2]]; sum_ij C = 2, rows 3+1, cols 1+3
    a = [0, 0, 0, 1, 1]
    b = [0, 0, 1, 1, 1]
    expected = (2 - 4 * 4 / 10) / (4 - 4 * 4 / 10)
    assert adjusted_rand_index(a, b) == pytest.approx(expected)


def test_ari_near_zero_for_random_partitions():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 3, 300)
    scores = [adjusted_rand_index(a, np.random.default_rng(s).integers(0, 3, 300))
              for s in range(100)]
    assert abs(np.mean(scores)) < 0.02


def test_ari_errors():
    with pytest.raises(ValueError):
        adjusted_rand_index([0, 1], [0, 1, 1])
    with pytest.raises(ValueError):
        adjusted_rand_index([0], [0])


def test_nmi_identical_and_independent():
    a = np.repeat([0, 1, 2], 5)
    assert normalized_mutual_information(a, a) == pytest.approx(1.0)
    rng = np.random.default_rng(1)
    x, y = rng.integers(0, 4, 10000), rng.integers(0, 4, 10000)
    assert normalized_mutual_information(x, y) < 0.02


def test_nmi_single_cluster_warns_and_is_zero():
    with pytest.warns(RuntimeWarning):
        assert normalized_mutual_information([0, 0, 0], [0, 1, 2]) == 0.0


def test_contingency_marginals():
    t = contingency_table([0, 0, 1, 2], ["a", "b", "b", "b"])
    np.testing.assert_array_equal(t.counts, [[1, 1], [0, 1], [0, 1]])
    assert t.total == 4 and t.rows.sum() == 4 and t.cols.sum() == 4


def test_overlap_table_hand_instance():
    a = [0, 0, 0, 1, 1, 2]
    b = [1, 1, 0, 0, 0, 1]
    frac, rows, cols = overlap_table(a, b)
    np.testing.assert_allclose(frac, [[1 / 3, 2 / 3], [1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(frac.sum(1), 1.0)


def test_overlap_table_identity_and_constant():
    a = [0, 1, 2, 1]
    np.testing.assert_array_equal(overlap_table(a, a)[0], np.eye(3))
    np.testing.assert_array_equal(overlap_table(a, [5] * 4)[0], np.ones((3, 1)))


# ---------------------------------------------------------------- survival

def test_km_hand_example():
    curve = kaplan_meier([1, 2, 3], [1, 1, 1])
    np.testing.assert_array_equal(curve.times, [1, 2, 3])
    assert list(curve.survival) == [2 / 3, 1 / 3, 0.0]
    np.testing.assert_array_equal(curve.at_risk, [3, 2, 1])


def test_km_all_censored_is_flat():
    curve = kaplan_meier([1, 4, 2], [0, 0, 0])
    np.testing.assert_array_equal(curve.survival, 1.0)


def test_km_deaths_precede_censorings_at_ties():
    curve = kaplan_meier([2, 2, 3], [1, 0, 1])
    assert curve.survival[0] == pytest.approx(2 / 3)
    assert curve.survival[1] == 0.0


@given(st.lists(st.tuples(st.integers(1, 8), st.booleans()), min_size=1, max_size=25))
def test_km_matches_loop_oracle(data):
    times = [t for t, _ in data]
    events = [e for _, e in data]
    curve = kaplan_meier(times, events)
    ref = kaplan_meier_loop(times, events)
    np.testing.assert_allclose(curve.times, [t for t, _ in ref])
    np.testing.assert_allclose(curve.survival, [s for _, s in ref], atol=1e-12)
    assert np.all(np.diff(curve.survival) <= 0)


def test_km_uncensored_incidence_is_empirical_cdf(rng):
    t = rng.exponential(2.0, 50)
    curve = kaplan_meier(t, np.ones(50))
    ecdf = np.searchsorted(np.sort(t), curve.times, side="right") / 50
    np.testing.assert_allclose(curve.crude_incidence, ecdf, atol=1e-12)


def test_km_step_evaluation_is_right_continuous():
    curve = kaplan_meier([1, 2, 3], [1, 1, 1])
    np.testing.assert_allclose(curve.at([0.5, 1.0, 1.5, 3.0]), [1, 2 / 3, 2 / 3, 0])


def test_km_rejects_bad_input():
    with pytest.raises(ValueError):
        kaplan_meier([], [])
    with pytest.raises(ValueError):
        kaplan_meier([0.0, 1.0], [1, 1])


def test_nelson_aalen_hand_value():
    assert nelson_aalen([1, 2, 3], [1, 0, 1]) == pytest.approx(1 / 3 + 1 / 1)


def _two_group_reference(t1, e1, t2, e2):
    """Two-sample log-rank from its textbook table, one row per event time."""
    t = np.r_[t1, t2]
    e = np.r_[e1, e2].astype(bool)
    g = np.r_[np.zeros(len(t1)), np.ones(len(t2))]
    o_minus_e = var = 0.0
    for s in np.unique(t[e]):
        risk = t >= s
        n, n1 = risk.sum(), (risk & (g == 0)).sum()
        d = (e & (t == s)).sum()
        d1 = (e & (t == s) & (g == 0)).sum()
        o_minus_e += d1 - d * n1 / n
        if n > 1:
            var += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1)
    return o_minus_e ** 2 / var


def test_logrank_two_groups_matches_table_reference(rng):
    t1, t2 = rng.integers(1, 20, 30), rng.integers(3, 25, 40)
    e1, e2 = rng.integers(0, 2, 30), rng.integers(0, 2, 40)
    res = logrank_test([(t1, e1), (t2, e2)])
    assert res.statistic == pytest.approx(_two_group_reference(t1, e1, t2, e2), rel=1e-10)
    assert res.df == 1


def test_logrank_null_calibration():
    crit = stats.chi2.ppf(0.99, 1)
    below = 0
    for seed in range(100):
        r = np.random.default_rng(seed)
        groups = [(r.exponential(10.0, 500), np.ones(500)) for _ in range(2)]
        below += logrank_test(groups).statistic < crit
    assert below >= 95


def test_logrank_separates_distant_scales(rng):
    res = logrank_test([(rng.exponential(10, 500), np.ones(500)),
                        (rng.exponential(10000, 500), np.ones(500))])
    assert res.p_value < 1e-6


def test_logrank_identical_groups_zero(rng):
    t, e = rng.exponential(5, 40), rng.integers(0, 2, 40)
    e[0] = 1
    assert logrank_test([(t, e), (t, e)]).statistic == pytest.approx(0.0, abs=1e-10)


def test_logrank_invariances(rng):
    groups = [(rng.exponential(s, 60), rng.integers(0, 2, 60)) for s in (1.0, 2.0, 4.0)]
    base = logrank_test(groups)
    assert base.df == 2
    shuffled = logrank_test([groups[2], groups[0], groups[1]])
    transformed = logrank_test([(np.log1p(t) * 3 + 1, e) for t, e in groups])
    assert shuffled.statistic == pytest.approx(base.statistic, rel=1e-9)
    assert transformed.statistic == pytest.approx(base.statistic, rel=1e-9)


def test_logrank_errors():
    with pytest.raises(ValueError):
        logrank_test([([1.0, 2.0], [0, 0]), ([3.0], [0])])
    with pytest.raises(ValueError):
        logrank_test([([1.0], [1])])


# -------------------------------------------------------------- chi-square

@pytest.mark.parametrize("df", [1, 2, 3, 4, 7, 15])
@pytest.mark.parametrize("x", [0.01, 0.5, 1.0, 3.84, 10.0, 25.0])
def test_chi2_sf_against_scipy_and_series(x, df):
    assert chi2_sf(x, df) == pytest.approx(stats.chi2.sf(x, df), rel=1e-10, abs=1e-300)
    if x < 12:
        assert chi2_sf(x, df) == pytest.approx(chi2_sf_series(x, df), abs=1e-10)


def test_chi2_sf_extreme_tail():
    assert chi2_sf(400.0, 1) == pytest.approx(stats.chi2.sf(400.0, 1), rel=1e-8)
    assert gamma_q(1.5, 0.0) == 1.0
    with pytest.raises(ValueError):
        gamma_q(0.0, 1.0)


def test_gamma_q_exponential_case():
    assert gamma_q(1.0, 2.5) == pytest.approx(math.exp(-2.5), rel=1e-13)


# ----------------------------------------------------------------- exports

def test_km_csv_and_report(tmp_path, rng):
    labels = np.r_[np.zeros(20, int), np.ones(20, int)]
    times = np.r_[rng.exponential(1, 20), rng.exponential(50, 20)]
    events = np.ones(40, int)
    km_curves_csv(tmp_path / "km.csv", labels, times, events)
    lines = (tmp_path / "km.csv").read_text().splitlines()
    assert lines[0] == "cluster_id,time,survival,at_risk,events"
    assert len(lines) == 41
    rep = cluster_survival_report(labels, times, events)
    assert rep["df"] == 1 and rep["p_value"] < 1e-3
    assert cluster_survival_report(np.zeros(5), np.ones(5), np.ones(5))["statistic"] == 0.0
