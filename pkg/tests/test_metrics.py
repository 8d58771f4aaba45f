import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.common.errors import ContractError, DataError, DomainError
from src.metrics.report import evaluate_forecast, load_per_node, summarize_ensemble
from src.metrics.scores import (
    IntervalSpec,
    calendar_weeks,
    empirical_interval,
    gaussian_interval,
    mpiw,
    picp,
    picp_from_bounds,
    r2,
    rmse,
    spatial_aggregate,
    weekly_median_r2,
)
from src.models.ensemble import PredictiveEnsemble

SPEC_90 = IntervalSpec(0.9)


@pytest.mark.parametrize(
    "residuals, expected",
    [([0.0, 0.0], 0.0), ([1.0, -1.0], 1.0), ([3.0, 4.0], math.sqrt(12.5))],
)
def test_rmse_examples(residuals, expected):
    target = np.array([1.0, 2.0])
    assert rmse(target + np.array(residuals), target) == pytest.approx(expected)
    assert rmse(target, target, np.array([False, False])) is None


def test_rmse_ignores_invalid_targets():
    pred = np.array([1.0, 5.0, 3.0])
    target = np.array([1.0, np.nan, 4.0])
    assert rmse(pred, target, np.array([True, True, True])) == pytest.approx(math.sqrt(0.5))


def test_r2_examples():
    target = np.array([1.0, 2.0, 3.0])
    assert r2(target, target) == 1.0
    assert r2(np.full(3, 2.0), target) == pytest.approx(0.0)
    assert r2(np.array([1.0, 2.0, 4.0]), target) == pytest.approx(0.5)
    assert r2(target, np.full(3, 7.0)) is None


def _week_with_r2(score: float) -> tuple:
    target = np.array([-1.0, 1.0])
    # ss_tot = 2, so a symmetric residual r gives 1 − r²
    residual = math.sqrt(1.0 - score)
    return target + np.array([residual, -residual]), target


def _weekly(scores):
    preds, targets = zip(*[_week_with_r2(s) for s in scores])
    weeks = np.repeat(np.arange(len(scores)), 2)
    return np.concatenate(preds), np.concatenate(targets), weeks


def test_weekly_median_examples():
    pred, target, weeks = _weekly([1.0, 1.0])
    assert weekly_median_r2(pred, target, weeks) == pytest.approx(1.0)
    pred, target, weeks = _weekly([0.2, 0.5, 0.9])
    assert weekly_median_r2(pred, target, weeks) == pytest.approx(0.5)
    pred, target, weeks = _weekly([0.2, 0.4, 0.6, 0.8])
    assert weekly_median_r2(pred, target, weeks) == pytest.approx(0.5)


def test_weekly_median_skips_undefined_weeks():
    pred, target, weeks = _weekly([0.2, 0.5, 0.9])
    target = np.concatenate([target, [3.0, 3.0]])
    pred = np.concatenate([pred, [1.0, 2.0]])
    weeks = np.concatenate([weeks, [3, 3]])
    assert weekly_median_r2(pred, target, weeks) == pytest.approx(0.5)
    assert weekly_median_r2(np.zeros(4), np.ones(4), np.array([0, 0, 1, 1])) is None


def test_calendar_weeks():
    assert calendar_weeks(5, hours_per_week=2).tolist() == [0, 0, 1, 1, 2]
    assert calendar_weeks(3, hours_per_week=2, offset=1).tolist() == [0, 1, 1]


def test_spatial_aggregate_examples():
    assert spatial_aggregate([0.7, 0.7, 0.7]) == pytest.approx(0.7)
    assert spatial_aggregate([0.8, 1.0]) == pytest.approx(0.9)
    assert spatial_aggregate([0.8, None, 1.0, float("nan")]) == pytest.approx(0.9)
    assert spatial_aggregate([None]) is None


def test_interval_spec():
    spec = IntervalSpec(0.75)
    assert spec.lower == pytest.approx(0.125)
    assert spec.upper == pytest.approx(0.875)
    assert spec.label == "75"
    with pytest.raises(DomainError):
        IntervalSpec(1.0)


def test_picp_examples():
    rng = np.random.default_rng(0)
    samples = rng.normal(size=(11, 50))
    median = np.median(samples, axis=0)
    assert picp(samples, median, None, IntervalSpec(0.75)) == 1.0
    assert picp(samples, median, None, SPEC_90) == 1.0

    degenerate = np.ones((5, 20))
    assert picp(degenerate, np.full(20, 2.0), None, SPEC_90) == 0.0
    assert mpiw(degenerate, None, SPEC_90) == 0.0


def test_picp_monte_carlo_coverage():
    rng = np.random.default_rng(1)
    lower, upper = empirical_interval(rng.normal(size=(10_000, 1)), SPEC_90)
    targets = rng.normal(size=10_000)
    coverage = picp_from_bounds(np.full(10_000, lower[0]), np.full(10_000, upper[0]), targets)
    assert 0.88 <= coverage <= 0.92


def test_picp_requires_two_members():
    with pytest.raises(ContractError):
        picp(np.zeros((1, 3)), np.zeros(3), None, SPEC_90)
    with pytest.raises(ContractError):
        empirical_interval(np.zeros((1, 3)), SPEC_90)


def test_empirical_interval_interpolates_linearly():
    lower, upper = empirical_interval(np.arange(5.0)[:, None], IntervalSpec(0.5))
    assert lower[0] == pytest.approx(1.0)
    assert upper[0] == pytest.approx(3.0)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_coverage_is_monotone_in_level(seed):
    rng = np.random.default_rng(seed)
    samples = rng.normal(size=(11, 200))
    targets = rng.normal(size=200) * 1.5
    levels = [IntervalSpec(c) for c in (0.5, 0.75, 0.9, 0.95)]
    coverages = [picp(samples, targets, None, s) for s in levels]
    widths = [mpiw(samples, None, s) for s in levels]
    assert coverages == sorted(coverages)
    assert widths == sorted(widths)


def test_mpiw_shift_and_scale():
    samples = np.random.default_rng(3).normal(size=(11, 40))
    base = mpiw(samples, None, SPEC_90)
    assert mpiw(samples + 5.0, None, SPEC_90) == pytest.approx(base)
    assert mpiw(samples * 3.0, None, SPEC_90) == pytest.approx(3.0 * base)


def test_picp_invariant_under_monotone_transform():
    rng = np.random.default_rng(4)
    samples = rng.normal(size=(11, 300))
    targets = rng.normal(size=300)
    # with 11 members the 0.6 level puts both bounds on order statistics
    spec = IntervalSpec(0.6)
    assert picp(np.exp(samples), np.exp(targets), None, spec) == picp(samples, targets, None, spec)


def test_gaussian_interval():
    lower, upper = gaussian_interval(np.array([1.0, 2.0]), np.array([4.0, 0.0]), SPEC_90)
    assert upper[0] - 1.0 == pytest.approx(2.0 * 1.6448536269514722)
    assert lower[1] == upper[1] == 2.0


def test_summarize_ensemble():
    samples = np.random.default_rng(5).normal(size=(7, 6, 2))
    forecast = summarize_ensemble(PredictiveEnsemble(samples))
    np.testing.assert_array_equal(forecast.center, np.median(samples, axis=0))
    assert set(forecast.bounds) == {"75", "90"}
    assert summarize_ensemble(PredictiveEnsemble(samples[:1])).bounds is None

    with_variance = summarize_ensemble(PredictiveEnsemble(samples, log_variances=np.zeros_like(samples)))
    np.testing.assert_allclose(with_variance.center, samples.mean(axis=0))
    lower, upper = with_variance.bounds["90"]
    assert np.all(upper - lower > 2 * 1.64)


def _report(num_members: int, tmp_path=None):
    rng = np.random.default_rng(6)
    target = rng.normal(size=(8, 3))
    mask = rng.random((8, 3)) < 0.7
    mask[:, 2] = False
    samples = target[None] + rng.normal(size=(num_members, 8, 3)) * 0.1
    forecast = summarize_ensemble(PredictiveEnsemble(samples))
    return evaluate_forecast(
        forecast,
        np.where(mask, target, np.nan),
        mask,
        calendar_weeks(8, hours_per_week=4),
        ["a", "b", "c"],
        np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
        metadata={"regime": "JT"},
    )


def test_evaluate_forecast_reports_per_node_and_pooled_scores(tmp_path):
    report = _report(11)
    assert list(report.per_node["node"]) == ["a", "b", "c"]
    assert report.per_node.loc[2, "n_valid"] == 0
    assert report.rmse_spatial_mean == pytest.approx(report.per_node["rmse"].iloc[:2].mean())
    assert 0 <= report.picp["90"] <= 1
    assert report.mpiw["90"] >= report.mpiw["75"] >= 0

    paths = report.save(tmp_path)
    saved = json.loads(paths["report"].read_text())
    assert saved["metadata"] == {"regime": "JT"}
    per_node = load_per_node(paths["per_node"])
    assert per_node.shape[0] == 3
    assert np.isnan(per_node.loc[2, "rmse"])


def test_single_member_report_has_null_coverage(tmp_path):
    report = _report(1)
    assert report.picp == {"75": None, "90": None}
    saved = json.loads(report.save(tmp_path)["report"].read_text())
    assert saved["picp"]["90"] is None
    assert saved["rmse"] is not None


def test_load_per_node_rejects_malformed_rows(tmp_path):
    path = tmp_path / "per_node.csv"
    path.write_text("node,x,y,rmse\na,0,0,1.5\nb,1,0,oops\n")
    with pytest.raises(DataError, match="line 3"):
        load_per_node(path)
