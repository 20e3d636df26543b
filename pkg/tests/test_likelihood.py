import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit
from scipy.stats import binom, multinomial

from nmadta.dataset import Dataset, DiseaseGroup, TestDescriptor, TestKind, ThresholdSeries
from nmadta.likelihood import (AccuracyParams, CellTable, chain_loglik, dataset_loglik, multinomial_oracle,
                               positive_prob, saturated_loglik)


def make_series(x, n, thresholds=None):
    thresholds = thresholds or tuple(float(t + 1) for t in range(len(x)))
    return ThresholdSeries("S", "T", DiseaseGroup.DISEASED, n, tuple(thresholds), tuple(x))


@st.composite
def series_and_probs(draw, max_t=6, max_n=30, edge=False):
    t = draw(st.integers(1, max_t))
    n = draw(st.integers(1, max_n))
    x = sorted((draw(st.integers(0, n)) for _ in range(t)), reverse=True)
    lo = 1e-12 if edge else 1e-6
    p = sorted((draw(st.floats(lo, 1 - lo)) for _ in range(t)), reverse=True)
    p = np.array(p)
    # strictly decreasing
    for i in range(1, t):
        if p[i] >= p[i - 1]:
            p[i] = np.nextafter(p[i - 1], 0.0)
    return make_series(x, n), p


# -- positive_prob --------------------------------------------------------------
def test_positive_prob_at_reference_threshold():
    for ls in (-1.0, 0.0, 2.0):
        assert positive_prob(AccuracyParams(0.0, ls, True, 20.0), 20.0) == pytest.approx(0.5, abs=1e-15)


def test_positive_prob_one_log_unit_above_reference():
    a = AccuracyParams(0.0, 0.0, True, 20.0)
    assert positive_prob(a, 20.0 * math.e) == pytest.approx(expit(-1.0), abs=1e-14)
    assert positive_prob(a, 20.0 * math.e) == pytest.approx(0.2689, abs=1e-4)


def test_positive_prob_binary_ignores_scale():
    for ls in (-3.0, 0.0, 3.0):
        assert positive_prob(AccuracyParams(logit(0.61), ls, False), None) == pytest.approx(0.61, abs=1e-14)


@pytest.mark.parametrize("bad", [math.nan, math.inf])
def test_positive_prob_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        positive_prob(AccuracyParams(bad, 0.0, True, 10.0), 10.0)
    with pytest.raises(ValueError):
        positive_prob(AccuracyParams(0.0, 0.0, True, 10.0), -1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-2, 2), st.lists(st.floats(0.01, 1000), min_size=2, max_size=20, unique=True))
def test_positive_prob_strictly_decreasing(mu, ls, grid):
    a = AccuracyParams(mu, ls, True, 10.0)
    grid = sorted(grid)
    # thresholds a few ulps apart are indistinguishable after the log
    assume(np.diff(np.log(grid)).min() > 1e-9)
    logits = [a.logit(c) for c in grid]
    assert all(b < c for b, c in zip(logits[1:], logits))


# -- chain likelihood -----------------------------------------------------------
def test_single_threshold_is_binomial():
    s = make_series([6], 10)
    expected = math.log(math.comb(10, 6)) + 10 * math.log(0.5)
    assert chain_loglik(s, [0.5]) == pytest.approx(expected, abs=1e-12)
    assert multinomial_oracle(s, [0.5]) == pytest.approx(binom.logpmf(6, 10, 0.5), abs=1e-12)


def test_two_thresholds_match_interval_multinomial():
    s = make_series([3, 1], 5)
    expected = multinomial.logpmf([2, 2, 1], 5, [0.4, 0.3, 0.3])
    assert chain_loglik(s, [0.6, 0.3]) == pytest.approx(expected, abs=1e-12)
    assert multinomial_oracle(s, [0.6, 0.3]) == pytest.approx(expected, abs=1e-12)


def test_increasing_counts_are_impossible():
    s = SimpleNamespace(group_size=5, positives=(2, 3))
    assert chain_loglik(s, [0.6, 0.3]) == -math.inf
    assert multinomial_oracle(s, [0.6, 0.3]) == -math.inf


def test_zero_previous_count_conditional_term():
    s = make_series([0, 0], 5)
    # the second term is Bin(0 | 0, q) = 1
    assert chain_loglik(s, [0.3, 0.1]) == pytest.approx(binom.logpmf(0, 5, 0.3), abs=1e-12)


def test_nan_probabilities_are_errors():
    with pytest.raises(ValueError):
        chain_loglik(make_series([3], 5), [math.nan])


def test_near_one_first_probability_is_finite():
    s = make_series([10, 4], 10)
    p = [1 - 1e-12, 0.4]
    v = chain_loglik(s, p)
    assert math.isfinite(v)
    # first term contributes ~0; the remainder is Bin(4 | 10, 0.4 / p1)
    assert v == pytest.approx(binom.logpmf(4, 10, 0.4 / p[0]), abs=1e-9)
    assert multinomial_oracle(s, p) == pytest.approx(v, abs=1e-10)


@settings(max_examples=500, deadline=None)
@given(series_and_probs())
def test_chain_equals_multinomial_oracle(case):
    s, p = case
    assert abs(chain_loglik(s, p) - multinomial_oracle(s, p)) < 1e-10


@settings(max_examples=200, deadline=None)
@given(series_and_probs())
def test_oracle_equals_scipy_multinomial(case):
    s, p = case
    x = np.array(s.positives, float)
    counts = np.concatenate(([s.group_size], x)) - np.concatenate((x, [0]))
    cells = np.concatenate(([1.0], p)) - np.concatenate((p, [0.0]))
    ref = multinomial.logpmf(counts, s.group_size, cells / cells.sum())
    assert multinomial_oracle(s, p) == pytest.approx(ref, abs=1e-8)


@settings(max_examples=300, deadline=None)
@given(series_and_probs(edge=True))
def test_chain_finite_near_probability_bounds(case):
    s, p = case
    v = chain_loglik(s, p)
    assert math.isfinite(v)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(1, 30), st.floats(-6, 6), st.floats(-1.5, 1.5), st.data())
def test_logit_path_matches_probability_path(t, n, mu, ls, data):
    x = sorted((data.draw(st.integers(0, n)) for _ in range(t)), reverse=True)
    thresholds = tuple(float(c) for c in sorted(data.draw(st.sets(st.integers(1, 200), min_size=t, max_size=t))))
    s = make_series(x, n, thresholds)
    a = AccuracyParams(mu, ls, True, 20.0)
    p = [positive_prob(a, c) for c in thresholds]
    d = Dataset((TestDescriptor("T", "T", TestKind.CONTINUOUS, 20.0),),
                (s, ThresholdSeries("S", "T", DiseaseGroup.NONDISEASED, 1, (1.0,), (0,))))
    params = {("S", "T", DiseaseGroup.DISEASED): a,
              ("S", "T", DiseaseGroup.NONDISEASED): AccuracyParams(0.0, 0.0, True, 20.0)}
    other = chain_loglik(d.series[1], [positive_prob(params[("S", "T", DiseaseGroup.NONDISEASED)], 1.0)])
    assert dataset_loglik(d, params) - other == pytest.approx(chain_loglik(s, p), abs=1e-8)
    table = CellTable([s], {"T": 20.0})
    vec = table.series_loglik(np.array([mu]), np.array([ls]), np.array([True]))[0]
    assert vec == pytest.approx(dataset_loglik(d, params) - other, abs=1e-9)


# -- dataset likelihood ---------------------------------------------------------
def test_empty_dataset_loglik_is_zero():
    assert dataset_loglik(Dataset((), ()), {}) == 0.0


def test_dataset_loglik_is_additive():
    t = TestDescriptor("B", "B", TestKind.BINARY, None)
    s1 = ThresholdSeries("S", "B", DiseaseGroup.DISEASED, 20, (None,), (12,))
    s0 = ThresholdSeries("S", "B", DiseaseGroup.NONDISEASED, 30, (None,), (4,))
    d = Dataset((t,), (s1, s0))
    params = {s1.key: AccuracyParams(0.3, 0.0, False), s0.key: AccuracyParams(-1.7, 0.0, False)}
    expected = binom.logpmf(12, 20, expit(0.3)) + binom.logpmf(4, 30, expit(-1.7))
    assert dataset_loglik(d, params) == pytest.approx(expected, abs=1e-12)
    with pytest.raises(KeyError):
        dataset_loglik(d, {s1.key: params[s1.key]})


def test_single_reference_threshold_reduces_to_bivariate_binomial():
    t = TestDescriptor("X", "X", TestKind.CONTINUOUS, 15.0)
    s1 = ThresholdSeries("S", "X", DiseaseGroup.DISEASED, 40, (15.0,), (31,))
    s0 = ThresholdSeries("S", "X", DiseaseGroup.NONDISEASED, 90, (15.0,), (11,))
    d = Dataset((t,), (s1, s0))
    for ls in (-1.0, 0.5):
        params = {s1.key: AccuracyParams(1.1, ls, True, 15.0), s0.key: AccuracyParams(-2.0, -ls, True, 15.0)}
        expected = binom.logpmf(31, 40, expit(1.1)) + binom.logpmf(11, 90, expit(-2.0))
        assert dataset_loglik(d, params) == pytest.approx(expected, abs=1e-12)


def test_saturated_loglik_uses_empirical_conditionals():
    s = make_series([6, 3, 0], 10)
    p = [0.6, 0.3, 1e-300]
    assert saturated_loglik(s) == pytest.approx(chain_loglik(s, [0.6, 0.3, 0.0]), abs=1e-12)
    assert saturated_loglik(s) >= chain_loglik(s, p)


@settings(max_examples=100, deadline=None)
@given(series_and_probs())
def test_saturated_bounds_chain(case):
    s, p = case
    assert saturated_loglik(s) >= chain_loglik(s, p) - 1e-9
