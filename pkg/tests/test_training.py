"""Optimizer behaviour, learning-rate decay, and the epoch loop."""

import math

import numpy as np
import pytest

from roadseg import ConfigError, ShapeError, Tensor
from roadseg.checkpoint import load_model
from roadseg.data import synth_roads
from roadseg.model import Model, toy_config
from roadseg.optim import Adam, DecaySchedule
from roadseg.training import (
    HISTORY_HEADER,
    HistoryRow,
    evaluate,
    format_history,
    train_model,
    write_history,
)

# -- learning-rate schedule ---------------------------------------------------


def test_schedule_reference_points():
    sched = DecaySchedule()
    assert sched.lr(0) == 0.001
    assert abs(sched.lr(10000) - 0.00096) < 1e-12
    assert abs(sched.lr(20000) - 0.001 * 0.96**2) < 1e-15


def test_schedule_decays_continuously():
    sched = DecaySchedule()
    steps = [0, 1, 57, 9999, 10000, 43210]
    values = [sched.lr(t) for t in steps]
    assert all(a > b for a, b in zip(values, values[1:]))
    # fractional exponent between milestones
    assert sched.lr(5000) == pytest.approx(0.001 * 0.96**0.5, rel=1e-12)


def test_schedule_staircase_holds_between_milestones():
    sched = DecaySchedule(staircase=True)
    assert sched.lr(0) == sched.lr(5000) == sched.lr(9999) == 0.001
    assert sched.lr(10000) == pytest.approx(0.00096, abs=1e-12)


# -- Adam ---------------------------------------------------------------------


def _scalar_param(value):
    return Tensor.full((1, 1, 1, 1), value, requires_grad=True)


def test_adam_first_step_matches_closed_form():
    w = _scalar_param(5.0)
    opt = Adam([("w", w)], schedule=DecaySchedule())
    w.grad = np.ones_like(w.data)
    opt.step()
    # bias-corrected m-hat = v-hat = 1 on the first step, so the update is
    # lr * 1 / (1 + eps) regardless of the raw gradient magnitude's sign pattern
    expected = 5.0 - 0.001 / (1.0 + 1e-8)
    assert w.item() == pytest.approx(expected, rel=1e-14)
    assert opt.t == 1


def test_adam_skips_missing_gradients():
    w = _scalar_param(2.0)
    opt = Adam([("w", w)], schedule=DecaySchedule())
    opt.step()
    assert w.item() == 2.0
    assert opt.t == 1  # time still advances so the schedule stays in sync


def test_adam_rejects_shape_mismatched_gradient():
    w = _scalar_param(1.0)
    opt = Adam([("w", w)], schedule=DecaySchedule())
    w.grad = np.ones((1, 1, 2, 2))
    with pytest.raises(ShapeError):
        opt.step()


def test_adam_zero_grad_clears_leaves():
    w = _scalar_param(1.0)
    opt = Adam([("w", w)], schedule=DecaySchedule())
    w.grad = np.ones_like(w.data)
    opt.zero_grad()
    assert w.grad is None


def test_adam_minimises_quadratic_bowl():
    w = _scalar_param(4.0)
    opt = Adam([("w", w)], schedule=DecaySchedule(base_lr=0.05))
    for _ in range(400):
        opt.zero_grad()
        shifted = w - Tensor.full((1, 1, 1, 1), 3.0)
        (shifted * shifted).sum().backward()
        opt.step()
    assert abs(w.item() - 3.0) < 1e-3


def test_adam_last_lr_tracks_executed_step():
    sched = DecaySchedule()
    opt = Adam([("w", _scalar_param(1.0))], schedule=sched)
    assert opt.last_lr == sched.lr(0)
    opt.step()
    assert opt.last_lr == sched.lr(0)
    opt.step()
    assert opt.last_lr == sched.lr(1)


# -- history formatting -------------------------------------------------------


def test_history_header_and_row_layout(tmp_path):
    assert HISTORY_HEADER == "epoch,step,lr,loss,precision,f1,iou,val_precision,val_f1,val_iou"
    row = HistoryRow(
        epoch=1, step=7, lr=0.001, loss=0.5, precision=0.25, f1=1 / 3, iou=0.2,
        val_precision=math.nan, val_f1=math.nan, val_iou=math.nan,
    )
    text = format_history([row])
    lines = text.splitlines()
    assert lines[0] == HISTORY_HEADER
    assert lines[1].startswith("1,7,0.001,0.5,0.25,0.3333333333,0.2,nan,")
    assert text.endswith("\n")

    path = tmp_path / "history.csv"
    write_history(path, [row])
    assert path.read_text() == text


# -- the loop -----------------------------------------------------------------


def _toy_samples(n=4, size=32, seed=7):
    return synth_roads(n, size=size, seed=seed)


def test_train_model_validates_inputs():
    model = Model.build(toy_config(), seed=0)
    samples = _toy_samples(2)
    with pytest.raises(ConfigError):
        train_model(model, [], epochs=1, batch_size=2, seed=0)
    with pytest.raises(ConfigError):
        train_model(model, samples, epochs=0, batch_size=2, seed=0)
    with pytest.raises(ConfigError):
        train_model(model, samples, epochs=1, batch_size=0, seed=0)
    with pytest.raises(ConfigError):
        train_model(model, samples, epochs=1, batch_size=2, seed=0, loss="hinge")


def test_single_epoch_smoke():
    model = Model.build(toy_config(), seed=1)
    result = train_model(model, _toy_samples(2), epochs=1, batch_size=2, seed=3)
    assert len(result.history) == 1
    row = result.history[0]
    assert row.epoch == 1
    assert row.step == 1  # two samples in one batch
    assert row.lr == 0.001  # decayed lr of the very first step
    assert np.isfinite(row.loss)
    assert 0.0 <= row.iou <= 1.0
    assert math.isnan(row.val_iou)
    assert result.monitored == "train"


def test_loss_decreases_on_fixed_batch():
    model = Model.build(toy_config(), seed=2)
    samples = _toy_samples(4)
    result = train_model(model, samples, epochs=30, batch_size=4, seed=5)
    losses = [row.loss for row in result.history]
    assert losses[-1] < losses[0] * 0.8
    assert result.history[-1].step == 30


def test_training_is_deterministic_for_fixed_seed():
    histories = []
    for _ in range(2):
        model = Model.build(toy_config(), seed=9)
        result = train_model(model, _toy_samples(3), epochs=3, batch_size=2, seed=11)
        histories.append(format_history(result.history))
    assert histories[0] == histories[1]


def test_validation_columns_and_monitoring(tmp_path):
    model = Model.build(toy_config(), seed=4)
    train_set = _toy_samples(3, seed=21)
    val_set = _toy_samples(2, seed=22)
    ckpt = tmp_path / "best.ckpt"
    result = train_model(
        model, train_set, val_set, epochs=2, batch_size=2, seed=6, checkpoint_path=ckpt,
    )
    assert result.monitored == "val"
    for row in result.history:
        assert np.isfinite(row.val_precision)
        assert 0.0 <= row.val_iou <= 1.0
    assert ckpt.exists()
    assert result.best_iou == max(row.val_iou for row in result.history)
    assert result.best_epoch in {row.epoch for row in result.history}
    # the serialized best weights must load back into a same-shaped model
    fresh = Model.build(toy_config(), seed=99)
    load_model(ckpt, fresh)


def test_evaluate_counts_every_pixel():
    model = Model.build(toy_config(), seed=8)
    samples = _toy_samples(3, size=32)
    counts = evaluate(model, samples, batch_size=2)
    assert counts.total == 3 * 32 * 32
