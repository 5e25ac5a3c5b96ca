from dataclasses import replace

import numpy as np
import pytest

from kdbalance import geometry as geo
from kdbalance.datasets import DatasetSpec, generate
from kdbalance.distill import (
    SchedulerStrategy,
    TrainConfig,
    init_student,
    kd_step,
    next_lambda,
    run_training,
    steps_csv,
    sweep_lambda,
    train_teacher,
    verify_taylor,
)
from kdbalance.nn import accuracy, checkpoint_text

from oracles import grid_extrema


@pytest.fixture(scope="module")
def data():
    return generate(DatasetSpec(noise=0.1))


@pytest.fixture(scope="module")
def cfg():
    return TrainConfig(steps=40)


@pytest.fixture(scope="module")
def teacher(cfg, data):
    return train_teacher(cfg, data[0])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(student_sizes=(2, 64, 3))
    with pytest.raises(ValueError):
        TrainConfig(eta=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_bounds=(0.0, 1.0))
    with pytest.raises(ValueError):
        SchedulerStrategy(kind="bang_bang")
    with pytest.raises(ValueError):
        SchedulerStrategy(smoothing=1.0)


def test_teacher_deterministic(cfg, data, teacher):
    again = train_teacher(cfg, data[0])
    assert checkpoint_text(again) == checkpoint_text(teacher)


def test_teacher_beats_untrained_student(cfg, data, teacher):
    assert accuracy(teacher, data[1]) >= accuracy(init_student(cfg), data[1])


def test_kd_step_prediction_identity(cfg, data, teacher):
    student = init_student(cfg)
    batch = data[0].take(np.arange(64))
    new, rec = kd_step(student, teacher, batch, 0.3, 0.05)
    assert rec.predicted_delta == -0.05 * geo.bracket_value(rec.stats, 0.3)
    assert rec.actual_delta == rec.loss_total_after - rec.loss_total_before
    assert rec.residual == rec.actual_delta - rec.predicted_delta
    assert rec.loss_total_before == 0.3 * rec.loss_dist + (1 - 0.3) * rec.loss_cls
    expected = student.flatten() - 0.05 * (0.3 * rec.grad_dist.values + (1 - 0.3) * rec.grad_cls.values)
    assert np.array_equal(new.flatten(), expected)


def test_kd_step_rejects_bad_arguments(cfg, data, teacher):
    student = init_student(cfg)
    with pytest.raises(geo.DomainError):
        kd_step(student, teacher, data[0], 1.0, 0.1)
    with pytest.raises(geo.DomainError):
        kd_step(student, teacher, data[0], 0.5, 0.0)


def test_student_equal_to_teacher(cfg, data, teacher):
    batch = data[0].take(np.arange(32))
    new, rec = kd_step(teacher.copy(), teacher, batch, 0.4, 0.1, temperature=1.0)
    assert rec.loss_dist == 0.0
    assert np.abs(rec.grad_dist.values).max() == 0.0
    assert rec.degenerate and rec.a == 0.0
    assert np.array_equal(new.flatten(), teacher.flatten() - 0.1 * ((1 - 0.4) * rec.grad_cls.values + 0.4 * rec.grad_dist.values))
    assert rec.predicted_delta == pytest.approx(-0.1 * (0.6 * rec.b) ** 2, rel=1e-15)


def test_next_lambda_fixed():
    s = SchedulerStrategy("fixed", fixed_lambda=0.7)
    assert next_lambda(s, geo.GradientStats(2, 1, 0), 0.3, 0.1) == 0.7


def test_next_lambda_max_descent_picks_hi_when_distill_gradient_larger():
    stats = geo.GradientStats(2.0, 1.0, 0.3)
    lam = next_lambda(SchedulerStrategy("max_descent"), stats, 0.5, 0.1, (0.05, 0.95))
    _, _, grid_arg, _ = grid_extrema(lambda x: geo.bracket_value(stats, x), 0.05, 0.95)
    assert lam == 0.95
    assert abs(lam - grid_arg) <= 1e-4


def test_next_lambda_smoothing():
    lam = next_lambda(SchedulerStrategy("max_descent", smoothing=0.9), geo.GradientStats(2, 1, 0), 0.5, 0.1)
    assert lam == pytest.approx(0.9 * 0.5 + 0.1 * 0.95, abs=1e-15)


def test_next_lambda_degenerate_keeps_previous():
    s = geo.GradientStats(0.0, 1.0, 0.0, True)
    for kind in ("max_descent", "min_descent", "target_rate"):
        assert next_lambda(SchedulerStrategy(kind), s, 0.42, 0.1) == 0.42


def test_next_lambda_target_rate():
    stats = geo.GradientStats(1.0, 1.0, 0.0)
    lam = next_lambda(SchedulerStrategy("target_rate", target_delta=-0.065), stats, 0.3, 0.1)
    assert geo.predicted_delta(stats, lam, 0.1) == pytest.approx(-0.065, abs=1e-12)
    assert lam < 0.5


def test_run_training_deterministic(cfg, data, teacher):
    a = steps_csv(run_training(cfg, *data, teacher).records)
    b = steps_csv(run_training(cfg, *data, teacher).records)
    assert a == b


def test_run_training_records(cfg, data, teacher):
    result = run_training(cfg, *data, teacher)
    assert len(result.records) == cfg.steps
    assert [r.step for r in result.records] == list(range(cfg.steps))
    assert all(r.predicted_delta <= 0 for r in result.records)
    assert all(r.lam == 0.5 for r in result.records)


@pytest.mark.parametrize("kind", ["max_descent", "min_descent", "target_rate"])
def test_dynamic_lambda_lags_one_step(cfg, data, teacher, kind):
    strategy = SchedulerStrategy(kind, target_delta=-1e-3, smoothing=0.2)
    c = replace(cfg, strategy=strategy, steps=15)
    recs = run_training(c, *data, teacher).records
    assert recs[0].lam == 0.5
    for prev, cur in zip(recs, recs[1:]):
        assert cur.lam == next_lambda(strategy, prev.stats, prev.lam, c.eta, c.lambda_bounds)
        assert 0.05 <= cur.lam <= 0.95


def test_small_eta_mostly_descends(cfg, data, teacher):
    recs = run_training(replace(cfg, eta=1e-3, steps=50), *data, teacher).records
    assert np.mean([r.actual_delta < 0 for r in recs]) >= 0.8


def test_combined_gradient_identity(cfg, data, teacher):
    student = init_student(cfg)
    batch = data[0].take(np.arange(100))
    for i, lam in enumerate([0.2, 0.5, 0.9]):
        new, rec = kd_step(student, teacher, batch, lam, cfg.eta, step=i)
        assert rec.grad_dist.origin == "dist" and rec.grad_cls.origin == "cls"
        rebuilt = student.flatten() - cfg.eta * (lam * rec.grad_dist.values + (1 - lam) * rec.grad_cls.values)
        assert np.array_equal(new.flatten(), rebuilt)
        student = new


def test_verify_taylor_ratios(cfg, data, teacher):
    c = replace(cfg, steps=20)
    report = verify_taylor(c, [1e-2, 5e-3], *data, teacher)
    assert len(report.residual_ratio) == 1
    assert 0.15 <= report.residual_ratio[0] <= 0.45
    again = verify_taylor(c, [1e-2, 5e-3], *data, teacher)
    assert again == report


def test_verify_taylor_validation(cfg, data, teacher):
    with pytest.raises(ValueError):
        verify_taylor(cfg, [1e-2], *data, teacher)
    with pytest.raises(ValueError):
        verify_taylor(cfg, [1e-3, 1e-2], *data, teacher)


def test_linear_student_residual_vanishes(data, teacher):
    c = TrainConfig(steps=10, student_sizes=(2, 3))
    report = verify_taylor(c, [1e-2, 1e-3, 1e-4, 1e-5], *data, teacher)
    res = report.mean_abs_residual
    assert all(x > y for x, y in zip(res, res[1:]))
    rel = [r / a for r, a in zip(res, report.mean_abs_actual)]
    assert all(x > y for x, y in zip(rel, rel[1:]))
    assert rel[-1] < 1e-4


def test_sweep_single_point_matches_training(cfg, data, teacher):
    rows, logs = sweep_lambda(cfg, [0.5], *data, teacher)
    direct = run_training(replace(cfg, strategy=SchedulerStrategy("fixed", 0.5)), *data, teacher)
    assert rows[0].final_loss_total == direct.final_loss_total
    assert rows[0].test_accuracy == direct.test_accuracy
    assert steps_csv(logs[0.5]) == steps_csv(direct.records)


def test_sweep_rows_and_quadratic_predictions(cfg, data, teacher):
    grid = [0.1, 0.3, 0.5, 0.7, 0.9]
    rows, logs = sweep_lambda(replace(cfg, steps=5), grid, *data, teacher)
    assert [r.lam for r in rows] == grid
    # at one recorded step, predicted change over lambda is exactly quadratic
    stats = logs[0.5][2].stats
    lam_dense = np.linspace(0.05, 0.95, 19)
    preds = np.array([geo.predicted_delta(stats, x, cfg.eta) for x in lam_dense])
    fit = np.polyfit(lam_dense, preds, 2)
    assert np.abs(np.polyval(fit, lam_dense) - preds).max() < 1e-12
    best_on_grid = grid[int(np.argmin([geo.predicted_delta(stats, x, cfg.eta) for x in grid]))]
    assert best_on_grid == geo.lambda_max_descent(stats, (min(grid), max(grid))).value
