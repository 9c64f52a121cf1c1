import numpy as np
import pytest

from rlrv.checkpoints import checkpoint_steps, geometric_steps
from rlrv.estimation import EstimatedModel, Trace, ValueUncertainty
from rlrv.harness import PatrolConfig, build_patrol_mdp, run_policy
from rlrv.mdp import PolicyTable
from rlrv.quality import (CSV_HEADER, QualityThresholds, check_quality, first_satisfied, quality_series,
                          rolling_median, verdict_from_uncertainty)
from rlrv.verdict import EXIT_CODES, Status


def synthetic(bias_rel, sigma_rel, n=4, reachable=None):
    v = np.full(n, 10.0)
    reach = np.ones(n, dtype=bool) if reachable is None else np.asarray(reachable)
    return ValueUncertainty(v, v * bias_rel, np.diag((v * sigma_rel) ** 2), np.full(n, bias_rel),
                            np.full(n, sigma_rel), 500, reach)


@pytest.fixture(scope="module")
def patrol():
    mdp = build_patrol_mdp(PatrolConfig())
    return mdp, PolicyTable.uniform(18, 3)


def test_thresholds_must_be_positive():
    with pytest.raises(ValueError):
        QualityThresholds(0.0, 0.02)


def test_empty_trace_is_unverified(patrol):
    mdp, pi = patrol
    v = check_quality(EstimatedModel(18, 3), pi, 0.5)
    assert v.status is Status.UNVERIFIED
    assert "min N(s,a)=0" in v.reason


def test_partial_coverage_is_unverified(patrol):
    mdp, pi = patrol
    model = EstimatedModel.from_trace(run_policy(mdp, pi, 30, seed=0))
    v = check_quality(model, pi, 0.5)
    assert v.status is Status.UNVERIFIED and "min N(s,a)=0" in v.reason


def test_below_thresholds_is_satisfied():
    v = verdict_from_uncertainty(synthetic(0.01, 0.01), QualityThresholds())
    assert v.status is Status.SATISFIED


@pytest.mark.parametrize("b,s", [(0.05, 0.01), (0.01, 0.02), (0.2, 0.2)])
def test_thresholds_are_strict(b, s):
    assert verdict_from_uncertainty(synthetic(b, s), QualityThresholds()).status is Status.VIOLATED


def test_only_reachable_states_count():
    u = synthetic(0.01, 0.01)
    u.bias_rel[3] = 1.0
    hidden = ValueUncertainty(u.v_hat, u.bias, u.cov, u.bias_rel, u.sigma_rel, 500,
                              np.array([True, True, True, False]))
    assert verdict_from_uncertainty(u, QualityThresholds()).status is Status.VIOLATED
    assert verdict_from_uncertainty(hidden, QualityThresholds()).status is Status.SATISFIED


def test_worst_states_reported():
    u = synthetic(0.01, 0.01)
    u.sigma_rel[2] = 0.5
    v = verdict_from_uncertainty(u, QualityThresholds())
    assert v.worst_state_sigma == (2, 0.5)
    assert v.worst_state_bias[1] == pytest.approx(0.01)


def test_short_trace_single_entry(patrol):
    mdp, pi = patrol
    series = quality_series(run_policy(mdp, pi, 300, seed=0), pi, 0.5, check_every=500, resamples=100)
    assert [p.step for p in series] == [300]


def test_series_on_empty_trace():
    series = quality_series(Trace(18, 3), PolicyTable.uniform(18, 3), 0.5)
    assert len(series) == 1 and series[0].status is Status.UNVERIFIED


def test_first_satisfied_is_first_index():
    class P:
        def __init__(self, step, status):
            self.step, self.status = step, status
    pts = [P(1, Status.UNVERIFIED), P(2, Status.VIOLATED), P(3, Status.SATISFIED), P(4, Status.VIOLATED),
           P(5, Status.SATISFIED)]
    assert first_satisfied(pts) == 3
    assert first_satisfied(pts[:2]) is None


def test_csv_row_layout(patrol):
    mdp, pi = patrol
    series = quality_series(run_policy(mdp, pi, 1000, seed=1), pi, 0.5, check_every=500, resamples=100)
    assert CSV_HEADER == ["step", "max_bias_rel", "max_sigma_rel", "status"]
    row = series[-1].csv_row()
    assert row[0] == 1000 and row[3] in {s.value for s in Status}


def test_series_is_deterministic(patrol):
    mdp, pi = patrol
    trace = run_policy(mdp, pi, 2000, seed=2)
    a = quality_series(trace, pi, 0.5, check_every=1000, resamples=100, seed=3)
    b = quality_series(trace, pi, 0.5, check_every=1000, resamples=100, seed=3)
    assert [p.csv_row() for p in a] == [p.csv_row() for p in b]


def test_lifecycle_on_patrol(patrol):
    mdp, pi = patrol
    trace = run_policy(mdp, pi, 20_000, seed=0)
    series = quality_series(trace, pi, 0.5, resamples=200, steps=geometric_steps(20_000, 100, 1.5))
    statuses = [p.status for p in series]
    assert statuses[0] is Status.UNVERIFIED
    first = statuses.index(Status.SATISFIED)
    assert Status.VIOLATED in statuses[:first]


def test_rolling_median():
    np.testing.assert_array_equal(rolling_median([5, 1, 4, 2, 3, 0], 5), [3, 2])
    np.testing.assert_array_equal(rolling_median([3, 1], 5), [2])


def test_exit_codes_cover_all_statuses():
    assert {s: s.exit_code for s in Status} == EXIT_CODES
    assert EXIT_CODES == {Status.SATISFIED: 0, Status.VIOLATED: 2, Status.UNVERIFIED: 3}


class TestCheckpoints:
    def test_multiples_plus_end(self):
        assert checkpoint_steps(1200, 500) == [500, 1000, 1200]
        assert checkpoint_steps(1000, 500) == [500, 1000]

    def test_short_and_empty(self):
        assert checkpoint_steps(10, 500) == [10]
        assert checkpoint_steps(0, 500) == [0]

    def test_explicit_steps_clipped(self):
        assert checkpoint_steps(100, steps=[0, 50, 50, 400]) == [1, 50, 100]

    def test_geometric(self):
        steps = geometric_steps(1000, 100, 2.0)
        assert steps == [100, 200, 400, 800, 1000]
        with pytest.raises(ValueError):
            geometric_steps(1000, 100, 1.0)
