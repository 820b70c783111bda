"""Repeat aggregation, weight grids and the comparison arms."""

from pathlib import Path

import numpy as np
import pytest

import core.experiments as experiments
from core.errors import ConfigError, GsmoError
from core.experiments import (
    ExperimentData,
    approach_weights,
    coarse_grid,
    compare_approaches,
    epochs_to_reach,
    fine_tune,
    grid_search_weights,
    narrow_grid,
    prepare_data,
    run_parallel,
    run_repeats,
    with_overrides,
)
from core.metrics import MetricsReport, TargetMetrics
from core.models import COMPARE_APPROACHES, Approach, EpochRecord, HeadKind, RunResult
from core.result_aggregator import ResultAggregator, RunFailure, mean_std
from core.schemas import BalanceWeights, TrainConfig, override
from core.trainer import FitResult, evaluate_split, fit
from data.splits import DatasetSplits
from model.checkpoint import load_checkpoint, load_into
from model.network import PARAMETER_GROUPS, init_model


def scored(f1):
    target = TargetMetrics(accuracy=f1, precision=f1, recall=f1, f1=f1, fpr=1 - f1, micro_f1=f1)
    return MetricsReport(plant=target, disease=target, both=target)


def fake_run(seed, f1):
    return RunResult(
        approach="gsmo", seed=seed, weights=(1.0, 1.0, 1.0, 1.0), history={},
        best_epoch=3, best_val_f1=f1, epochs_trained=5, stopped_early=False,
        test_metrics=scored(f1), wall_seconds=1.0,
    )


def test_mean_and_population_std():
    assert mean_std([0.9, 1.0]) == pytest.approx((0.95, 0.05))
    assert mean_std([0.7]) == (0.7, 0.0)
    assert mean_std([0.3, 0.3, 0.3]) == (0.3, 0.0)


def test_aggregate_two_runs():
    report = ResultAggregator().aggregate("gsmo", [fake_run(1, 1.0), fake_run(0, 0.9)])
    assert [run.seed for run in report.runs] == [0, 1]
    assert report.mean.metric("both", "f1") == pytest.approx(0.95)
    assert report.std.metric("both", "f1") == pytest.approx(0.05)
    assert report.mean.statistic == "mean" and report.std.statistic == "std"
    assert [row.run_id for row in report.rows] == ["gsmo-s0", "gsmo-s1", "gsmo-mean", "gsmo-std"]


def test_only_the_mean_row_is_flagged_aggregate():
    report = ResultAggregator().aggregate("gsmo", [fake_run(0, 0.9), fake_run(1, 0.7)])
    flagged = [row.run_id for row in report.rows if row.aggregate]
    assert flagged == ["gsmo-mean"]
    assert not report.std.aggregate


def test_ten_repeats_match_hand_computed_statistics():
    # 0.50, 0.55, ..., 0.95: mean 0.725, population std 0.05 * sqrt((10^2 - 1) / 12)
    runs = [fake_run(seed, 0.5 + 0.05 * seed) for seed in range(10)]
    report = ResultAggregator().aggregate("gsmo", runs)
    assert report.mean.metric("both", "f1") == pytest.approx(0.725, abs=1e-12)
    assert report.std.metric("both", "f1") == pytest.approx(0.05 * np.sqrt(99 / 12), abs=1e-12)
    assert report.mean.metric("plant", "fpr") == pytest.approx(0.275, abs=1e-12)


def test_single_repeat_has_zero_spread():
    report = ResultAggregator().aggregate("gsmo", [fake_run(0, 0.8)])
    assert report.std.metric("plant", "acc") == 0.0
    assert report.std.epochs == 0.0


def test_aggregate_of_failures_only():
    failure = RunFailure(approach="gsmo", seed=0, error="boom")
    report = ResultAggregator().aggregate("gsmo", [], [failure])
    assert not report.succeeded
    assert report.mean is None
    assert report.to_dict()["failures"] == [{"approach": "gsmo", "seed": 0, "error": "boom"}]


def test_missing_targets_stay_empty():
    run = fake_run(0, 0.5)
    run.test_metrics = MetricsReport(plant=scored(0.5).plant)
    report = ResultAggregator().aggregate("single", [run])
    assert report.mean.metric("disease", "f1") is None
    assert report.mean.metric("plant", "f1") == 0.5


def test_coarse_grid_is_full_lexicographic_product():
    grid = coarse_grid()
    tuples = [w.as_tuple() for w in grid]
    assert len(grid) == 256
    assert tuples == sorted(tuples)
    assert tuples[0] == (0.2, 0.2, 0.2, 0.2)
    assert tuples[-1] == (0.8, 0.8, 0.8, 0.8)


def test_narrow_grid_stays_in_unit_range():
    grid = narrow_grid(BalanceWeights(beta1=0.0, beta2=1.0, delta1=0.5, delta2=0.1), step=0.1)
    values = np.array([w.as_tuple() for w in grid])
    assert values.min() >= 0.0 and values.max() <= 1.0
    assert len(grid) == 2 * 2 * 3 * 3
    assert (0.0, 1.0, 0.5, 0.1) in [w.as_tuple() for w in grid]


def test_arms_without_balance_weights_report_zeros():
    configured = BalanceWeights()
    assert approach_weights(Approach.POWERSET, configured) == (0.0, 0.0, 0.0, 0.0)
    assert approach_weights(Approach.GSMO, configured) == (1.0, 1.0, 1.0, 1.0)
    assert approach_weights(Approach.GSMO_WEIGHTED, configured) == (0.1, 0.4, 0.1, 0.5)


def test_run_parallel_keeps_item_order():
    assert run_parallel(lambda x: x * x, list(range(10)), jobs=4) == [x * x for x in range(10)]
    assert run_parallel(str, [], jobs=3) == []


def test_epochs_to_reach_threshold():
    history = [EpochRecord(e, 1.0, 1.0, f1) for e, f1 in enumerate([0.2, 0.95, 0.5], start=1)]
    assert epochs_to_reach(history, 0.9) == 2
    assert epochs_to_reach(history, 0.99) is None


def test_overrides_revalidate(tiny_config):
    changed = with_overrides(tiny_config, approach="powerset", weights=BalanceWeights(beta1=1.0))
    assert changed.approach == "powerset"
    assert changed.weights.beta1 == 1.0
    assert tiny_config.approach == "gsmo_weighted"
    with pytest.raises(ConfigError):
        with_overrides(tiny_config, approach="nonsense")


@pytest.fixture
def tiny_data(tiny_config):
    return prepare_data(tiny_config)


def test_prepare_data_generates_and_splits(tiny_data):
    assert len(tiny_data.dataset) == 20
    assert tiny_data.splits.sizes == (12, 4, 4)


def test_one_tuple_grid_returns_that_tuple(tiny_config, tiny_data):
    only = BalanceWeights(beta1=0.3, beta2=0.3, delta1=0.3, delta2=0.3)
    result = grid_search_weights([only], tiny_config, tiny_data)
    assert result.best.weights == only
    assert result.best.rank == 1
    assert not result.failures


def test_grid_rows_are_ranked(tiny_config, tiny_data):
    grid = [BalanceWeights(beta1=b, beta2=0.5, delta1=0.5, delta2=0.5) for b in (0.2, 0.8)]
    result = grid_search_weights(grid, tiny_config, tiny_data, jobs=2)
    f1s = [row.val_f1 for row in result.rows]
    assert f1s == sorted(f1s, reverse=True)
    assert [row.rank for row in result.rows] == [1, 2]


def test_empty_grid_is_rejected(tiny_config, tiny_data):
    with pytest.raises(ConfigError):
        grid_search_weights([], tiny_config, tiny_data)


def test_grid_with_every_cell_failing(tiny_config, tiny_data, monkeypatch):
    def explode(*args, **kwargs):
        raise GsmoError("no luck")

    monkeypatch.setattr(experiments, "fit", explode)
    with pytest.raises(GsmoError, match="no luck"):
        grid_search_weights(coarse_grid((0.5,)), tiny_config, tiny_data)


def test_run_repeats_writes_checkpoints(tiny_config, tiny_data, tmp_path):
    config = override(tiny_config, train=TrainConfig(max_epochs=1, batch_size=8, repeats=2, seed=5))
    report = run_repeats(Approach.GSMO_WEIGHTED, config, tiny_data, jobs=2, output_dir=tmp_path)
    assert report.succeeded
    assert [run.seed for run in report.runs] == [5, 6]
    for run in report.runs:
        assert run.epochs_trained == 1
        assert run.checkpoint_paths and all(Path(p).exists() for p in run.checkpoint_paths)
    assert 0.0 <= report.mean.metric("both", "f1") <= 1.0


def test_repeat_failures_are_reported(tiny_config, tiny_data):
    empty_val = ExperimentData(
        dataset=tiny_data.dataset,
        splits=DatasetSplits(
            train=tiny_data.splits.train, val=np.zeros(0, dtype=np.int64), test=tiny_data.splits.test
        ),
    )
    report = run_repeats(Approach.GSMO, tiny_config, empty_val)
    assert not report.succeeded
    assert isinstance(report.failures[0].exception, ConfigError)


def test_compare_runs_every_arm(tiny_config, tiny_data):
    reports = compare_approaches(tiny_config, tiny_data)
    assert sorted(r.approach for r in reports) == sorted(a.value for a in COMPARE_APPROACHES)
    means = [r.mean.metric("both", "f1") for r in reports]
    assert means == sorted(means, reverse=True)
    multi = next(r for r in reports if r.approach == "multi_model")
    assert multi.runs[0].weights == (0.0, 0.0, 0.0, 0.0)


def test_gsmo_transfer_needs_a_checkpoint(tiny_config, tiny_data):
    report = run_repeats(Approach.GSMO_TRANSFER, tiny_config, tiny_data)
    assert not report.succeeded
    assert "checkpoint" in report.failures[0].error


def test_repeat_with_an_unexpected_error_keeps_the_other_runs(tiny_config, monkeypatch):
    def flaky(approach, config, data, seed, output_dir=None):
        if seed == 1:
            raise ValueError("bad shape")
        return fake_run(seed, 0.8)

    monkeypatch.setattr(experiments, "run_approach", flaky)
    config = override(tiny_config, train=TrainConfig(max_epochs=1, batch_size=8, repeats=3, seed=0))
    report = run_repeats(Approach.GSMO, config, data=None, jobs=2)
    assert [run.seed for run in report.runs] == [0, 2]
    assert [failure.seed for failure in report.failures] == [1]
    assert isinstance(report.failures[0].exception, ValueError)
    assert report.failures[0].error == "bad shape"
    assert report.mean.metric("both", "f1") == pytest.approx(0.8)


def test_grid_cell_with_an_unexpected_error_is_a_failure(tiny_config, monkeypatch):
    good = BalanceWeights(beta1=0.2, beta2=0.2, delta1=0.2, delta2=0.2)
    bad = BalanceWeights(beta1=0.8, beta2=0.8, delta1=0.8, delta2=0.8)

    def fake_fit(kind, config, weights, dataset, splits, seed, **kwargs):
        if weights == bad:
            raise ValueError("bad shape")
        return FitResult(params=None, history=[], best_epoch=1, best_val_f1=0.7, epochs_trained=1, stopped_early=False)

    monkeypatch.setattr(experiments, "fit", fake_fit)
    result = grid_search_weights([good, bad], tiny_config, ExperimentData(dataset=None, splits=None))
    assert [row.weights for row in result.rows] == [good]
    assert result.best.val_f1 == 0.7
    assert result.failures == [(bad, "bad shape")]


@pytest.fixture
def donor(tiny_config, tiny_data):
    return init_model(HeadKind.GSMO, tiny_config.model, tiny_data.dataset.spaces, seed=99)


def test_fine_tune_frozen_without_epochs_reproduces_the_donor(tiny_config, tiny_data, donor):
    config = override(tiny_config, train=TrainConfig(max_epochs=0, batch_size=8, seed=0))
    result = fine_tune(donor, PARAMETER_GROUPS, config, tiny_data, seed=0)
    expected = donor.state()
    state = result.params.state()
    assert state.keys() == expected.keys()
    for name, value in expected.items():
        np.testing.assert_array_equal(state[name], value, err_msg=name)
    assert result.epochs_trained == 0


def test_fine_tune_fully_frozen_keeps_trainable_weights(tiny_config, tiny_data, donor):
    config = override(tiny_config, train=TrainConfig(max_epochs=1, batch_size=8, seed=0))
    result = fine_tune(donor, PARAMETER_GROUPS, config, tiny_data, seed=0)
    for name, param in result.params.parameters.items():
        if param.trainable:
            np.testing.assert_array_equal(param.data, donor.parameters[name].data, err_msg=name)


def test_fine_tune_without_freezing_matches_fit_from_the_loaded_init(tiny_config, tiny_data, donor):
    tuned = fine_tune(donor, (), tiny_config, tiny_data, seed=3)

    initial = init_model(HeadKind.GSMO, tiny_config.model, tiny_data.dataset.spaces, 3)
    load_into(initial, donor)
    plain = fit(
        HeadKind.GSMO, tiny_config, tiny_config.weights, tiny_data.dataset, tiny_data.splits, 3, initial=initial
    )

    assert tuned.best_val_f1 == plain.best_val_f1
    assert [r.val_loss for r in tuned.history] == [r.val_loss for r in plain.history]
    for name, value in plain.params.state().items():
        np.testing.assert_array_equal(tuned.params.state()[name], value, err_msg=name)


def test_saved_checkpoint_reproduces_the_best_val_f1(tiny_config, tiny_data, tmp_path):
    run = experiments.run_approach(Approach.GSMO_WEIGHTED, tiny_config, tiny_data, seed=0, output_dir=tmp_path)
    [path] = run.checkpoint_paths
    restored = load_checkpoint(path)
    evaluation = evaluate_split(restored, tiny_data.dataset, tiny_data.splits.val, tiny_config.weights)
    assert evaluation.selection_f1 == pytest.approx(run.best_val_f1, abs=1e-12)
