import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adacong.conformal import (CalibrationSet, ConformalQuantile, NonconformityRule, PredictionSet,
                               compute_quantile, empirical_coverage, label_scores, prediction_set,
                               quantile_index, score, set_sizes, true_label_scores)


def oracle_quantile(scores, alpha):
    """Sort everything, index k - 1, +inf past the end."""
    s = sorted(float(x) for x in scores)
    k = math.ceil(round((len(s) + 1) * (1 - alpha), 9))
    return math.inf if k > len(s) else s[max(k, 1) - 1]


finite = st.floats(-1e6, 1e6, allow_nan=False)
alphas = st.sampled_from([0.01, 0.05, 0.1, 0.25, 0.5])


class TestQuantile:
    def test_ten_scores_median(self):
        scores = [0.1 * i for i in range(1, 11)]
        q = compute_quantile(scores, 0.5)
        assert quantile_index(10, 0.5) == 6
        assert q.value == pytest.approx(0.6)
        assert q.n == 10 and q.alpha == 0.5

    def test_single_score(self):
        assert compute_quantile([0.5], 0.5).value == 0.5

    def test_overflow_is_infinite(self):
        q = compute_quantile(np.linspace(0, 1, 10), 0.05)
        assert quantile_index(10, 0.05) == 11
        assert q.is_infinite

    def test_index_for_thousand(self):
        assert quantile_index(1000, 0.1) == 901

    def test_empty_raises(self):
        with pytest.raises(ValueError, match="empty"):
            compute_quantile([], 0.1)

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            compute_quantile([1.0, 2.0], alpha)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            compute_quantile([1.0, math.nan], 0.1)
        with pytest.raises(ValueError):
            CalibrationSet((1.0, math.inf))

    def test_calibration_set_input(self):
        cal = CalibrationSet.from_scores([3.0, 1.0, 2.0])
        assert list(cal.sorted()) == [1.0, 2.0, 3.0]
        assert cal.scores == (3.0, 1.0, 2.0)  # stored as given
        assert compute_quantile(cal, 0.25).value == 3.0

    def test_oracle_equivalence_random(self, rng):
        for _ in range(300):
            n = int(rng.integers(1, 201))
            alpha = float(rng.choice([0.01, 0.05, 0.1, 0.25, 0.5]))
            scores = rng.normal(size=n)
            assert compute_quantile(scores, alpha).value == oracle_quantile(scores, alpha)

    @given(st.lists(finite, min_size=1, max_size=60), alphas)
    def test_oracle_property(self, scores, alpha):
        assert compute_quantile(scores, alpha).value == oracle_quantile(scores, alpha)

    @given(st.lists(finite, min_size=1, max_size=60), alphas, alphas)
    def test_monotone_in_alpha(self, scores, a1, a2):
        lo, hi = sorted((a1, a2))
        assert compute_quantile(scores, lo).value >= compute_quantile(scores, hi).value

    @given(st.lists(finite, min_size=1, max_size=60), alphas, st.floats(0, 1e6))
    def test_adding_large_score_never_lowers(self, scores, alpha, bump):
        q = compute_quantile(scores, alpha).value
        extra = (q if math.isfinite(q) else max(scores)) + bump
        assert compute_quantile(scores + [extra], alpha).value >= q or math.isinf(q)

    def test_ties_take_order_statistic(self):
        assert compute_quantile([1.0, 1.0, 1.0, 2.0], 0.5).value == 1.0


class TestPredictionSet:
    def test_threshold(self):
        assert prediction_set([0.2, 0.9, 0.4], 0.5).members == frozenset({0, 2})

    def test_infinite_quantile_admits_all(self):
        q = ConformalQuantile(math.inf, 0.1, 5)
        ps = prediction_set([3.0, 1e9, -2.0, 0.0], q)
        assert len(ps) == 4 and ps.universe_size == 4

    def test_empty(self):
        assert len(prediction_set([0.8, 0.9], 0.5)) == 0

    def test_ties_included(self):
        assert 1 in prediction_set([0.1, 0.5], 0.5)

    def test_member_range_checked(self):
        with pytest.raises(ValueError):
            PredictionSet(frozenset({3}), 3)

    def test_empty_scores_rejected(self):
        with pytest.raises(ValueError):
            prediction_set([], 0.5)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 1), st.floats(0, 1))
    def test_monotone_in_quantile(self, scores, q1, q2):
        lo, hi = sorted((q1, q2))
        assert prediction_set(scores, lo).members <= prediction_set(scores, hi).members

    def test_batch_sizes_match_single(self, rng):
        m = rng.random((30, 6))
        sizes = set_sizes(m, 0.4)
        assert list(sizes) == [len(prediction_set(row, 0.4)) for row in m]


class TestScores:
    def test_residual(self):
        assert score(NonconformityRule.RESIDUAL, 2.0, 3.5) == 1.5

    def test_confidence(self):
        assert score(NonconformityRule.CONFIDENCE, [0.7, 0.2, 0.1], 0) == pytest.approx(0.3)

    def test_neg_log_prob_of_one(self):
        assert score(NonconformityRule.NEG_LOG_PROB, [1.0, 0.0], 0) == 0.0

    def test_neg_log_prob_floor(self):
        assert score(NonconformityRule.NEG_LOG_PROB, [1.0, 0.0], 1) == pytest.approx(-math.log(1e-12))

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            score(NonconformityRule.CONFIDENCE, [0.5, 0.5], 2)

    def test_malformed_distribution(self):
        with pytest.raises(ValueError):
            score(NonconformityRule.CONFIDENCE, [0.5, 0.6], 0)

    @given(st.lists(st.floats(0.001, 1), min_size=2, max_size=8), st.data())
    def test_ranges(self, raw, data):
        p = np.array(raw) / np.sum(raw)
        y = data.draw(st.integers(0, len(p) - 1))
        c = score(NonconformityRule.CONFIDENCE, p, y)
        nl = score(NonconformityRule.NEG_LOG_PROB, p, y)
        assert 0.0 <= c <= 1.0
        assert nl >= 0.0 and math.isfinite(nl)

    def test_vectorised_forms_agree(self, rng):
        p = rng.dirichlet(np.ones(4), size=10)
        y = rng.integers(0, 4, size=10)
        for rule in (NonconformityRule.CONFIDENCE, NonconformityRule.NEG_LOG_PROB):
            vec = true_label_scores(rule, p, y)
            assert np.allclose(vec, [score(rule, pi, yi) for pi, yi in zip(p, y)])
        with pytest.raises(ValueError):
            label_scores(NonconformityRule.RESIDUAL, p)


class TestCoverage:
    def test_two_of_four(self):
        assert empirical_coverage(0.6, [0.1, 0.5, 0.7, 0.9]) == 0.5

    def test_infinite(self):
        assert empirical_coverage(math.inf, [1e9, 3.0]) == 1.0

    def test_empty_test_scores(self):
        with pytest.raises(ValueError):
            empirical_coverage(0.5, [])

    def test_monte_carlo_uniform(self):
        covs = []
        for s in range(20):
            r = np.random.default_rng(s)
            q = compute_quantile(r.random(1000), 0.1)
            covs.append(empirical_coverage(q, r.random(10_000)))
        assert abs(np.mean(covs) - 0.90) <= 0.02
