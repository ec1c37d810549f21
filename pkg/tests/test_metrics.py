import math

import numpy as np
import pytest

from dialrank.metrics import METRIC_FIELDS, MetricsReport, evaluate, format_report, paired_report

from ranking_oracle import group_with_labels, oracle_metrics, random_groups


def test_perfect_ranking_is_all_ones():
    labels = [1] + [0] * 9
    scores = [0.9] + [0.1] * 9
    report = evaluate([(group_with_labels(labels), scores)])
    for m in METRIC_FIELDS:
        assert getattr(report, m) == 1.0
    assert report.n_groups_scored == 1


def test_positive_ranked_third():
    labels = [0, 0, 1] + [0] * 7
    scores = [0.9, 0.8, 0.7] + [0.1] * 7
    report = evaluate([(group_with_labels(labels), scores)])
    assert report.r_at_1 == 0.0 and report.r_at_2 == 0.0 and report.r_at_5 == 1.0
    assert report.p_at_1 == 0.0
    assert report.mrr == pytest.approx(1 / 3)
    assert report.map == pytest.approx(1 / 3)


def test_matches_oracle_single_positive():
    rng = np.random.default_rng(0)
    scored = random_groups(rng, 300)
    report = evaluate(scored)
    expected = oracle_metrics(scored)
    for m in METRIC_FIELDS:
        assert abs(getattr(report, m) - float(expected[m])) <= 1e-12


def test_matches_oracle_multi_positive():
    rng = np.random.default_rng(1)
    scored = random_groups(rng, 300, single_positive=False)
    report = evaluate(scored)
    expected = oracle_metrics(scored)
    for m in METRIC_FIELDS:
        assert abs(getattr(report, m) - float(expected[m])) <= 1e-12


def test_single_positive_identities():
    rng = np.random.default_rng(2)
    scored = random_groups(rng, 200)
    report = evaluate(scored)
    assert report.map == report.mrr
    assert report.p_at_1 == report.r_at_1
    assert report.r_at_1 <= report.r_at_2 <= report.r_at_5


def test_tie_handling_is_stable_by_original_index():
    labels = [0, 1, 0]
    scores = [0.5, 0.5, 0.5]  # all tied: original order kept, positive at rank 2
    report = evaluate([(group_with_labels(labels), scores)])
    assert report.mrr == pytest.approx(0.5)


def test_monotone_transform_invariance():
    rng = np.random.default_rng(3)
    scored = random_groups(rng, 50)
    base = evaluate(scored)
    for fn in (math.exp, lambda s: 3.0 * s + 10.0, lambda s: s**3):
        transformed = [(g, [fn(s) for s in scores]) for g, scores in scored]
        assert evaluate(transformed) == base


def test_invariant_to_group_order():
    rng = np.random.default_rng(4)
    scored = random_groups(rng, 40)
    fwd = evaluate(scored)
    rev = evaluate(list(reversed(scored)))
    assert fwd == rev


def test_adding_perfect_group_never_decreases_metrics():
    rng = np.random.default_rng(5)
    scored = random_groups(rng, 30)
    base = evaluate(scored)
    perfect = (group_with_labels([1] + [0] * 9), [9.0] + [0.0] * 9)
    bigger = evaluate(scored + [perfect])
    for m in METRIC_FIELDS:
        assert getattr(bigger, m) >= getattr(base, m)


def test_filter_degenerate_groups():
    scored = [
        (group_with_labels([1] + [0] * 9), [0.9] + [0.0] * 9),
        (group_with_labels([1, 1, 1]), [0.1, 0.2, 0.3]),  # all positive
        (group_with_labels([0, 0, 0]), [0.1, 0.2, 0.3]),  # all negative
    ]
    unfiltered = evaluate(scored)
    assert unfiltered.n_groups_scored == 3 and unfiltered.n_groups_skipped == 0
    filtered = evaluate(scored, filter_degenerate=True)
    assert filtered.n_groups_scored == 1 and filtered.n_groups_skipped == 2
    assert filtered.r_at_1 == 1.0
    assert filtered.n_groups_scored + filtered.n_groups_skipped == len(scored)


def test_score_arity_mismatch_is_error():
    with pytest.raises(ValueError):
        evaluate([(group_with_labels([1, 0]), [0.5])])


def test_non_finite_scores_rejected():
    with pytest.raises(ValueError):
        evaluate([(group_with_labels([1, 0]), [0.5, float("nan")])])


def test_paired_report_identical_is_zero():
    r = evaluate(random_groups(np.random.default_rng(6), 20))
    delta = paired_report(r, r)
    assert all(v == 0.0 for v in delta.deltas.values())
    assert delta.warning is None


def test_paired_report_tag_ablation_direction():
    with_tags = MetricsReport(r_at_1=0.717, n_groups_scored=10)
    without_tags = MetricsReport(r_at_1=0.683, n_groups_scored=10)
    delta = paired_report(with_tags, without_tags)
    assert delta.deltas["r_at_1"] == pytest.approx(-0.034)
    assert "-0.034" in str(delta)


def test_paired_report_is_elementwise_subtraction():
    rng = np.random.default_rng(7)
    a = evaluate(random_groups(rng, 25))
    b = evaluate(random_groups(rng, 25))
    delta = paired_report(a, b)
    for m in METRIC_FIELDS:
        assert delta.deltas[m] == getattr(b, m) - getattr(a, m)


def test_paired_report_warns_on_count_mismatch():
    a = MetricsReport(n_groups_scored=5)
    b = MetricsReport(n_groups_scored=7)
    assert paired_report(a, b).warning is not None


def test_format_report_contains_all_metrics():
    text = format_report(evaluate(random_groups(np.random.default_rng(8), 5)))
    for m in METRIC_FIELDS:
        assert m in text
