import math

import numpy as np
import pytest

import stdiff


def tiny_config(steps=60, seed=1):
    cfg = stdiff.TrainConfig()
    cfg.schedule.steps = 20
    cfg.schedule.beta_end = 0.3
    dims = cfg.architecture
    dims.time_embed_dim = 8
    dims.context_dim = 8
    dims.encoder_width = 16
    dims.encoder_layers = 1
    dims.predictor_width = 16
    dims.predictor_blocks = 1
    cfg.architecture = dims
    cfg.steps = steps
    cfg.batch_size = 32
    cfg.eval_interval = 20
    cfg.seed = seed
    return cfg


def test_schedule_matches_closed_form():
    s = stdiff.NoiseSchedule(3, 0.1, 0.3)
    assert s.steps == 3
    assert s.alpha_bar(3) == pytest.approx(0.9 * 0.8 * 0.7)
    assert s.reverse_coefficient(2) == pytest.approx(0.2 / math.sqrt(1 - 0.72))


def test_forward_noise_and_loss():
    s = stdiff.NoiseSchedule(1, 0.5, 0.5)
    x = np.array([[2.0]])
    eps = np.array([[1.0]])
    out = stdiff.forward_noise(x, 1, eps, s)
    assert out[0, 0] == pytest.approx(math.sqrt(0.5) * 2 + math.sqrt(0.5))
    assert stdiff.noise_prediction_loss(np.array([[1.0, 0.0]]), np.array([[0.5, 0.0]])) == pytest.approx(0.125)


def test_errors_carry_a_category():
    with pytest.raises(stdiff.StdiffError) as info:
        stdiff.NoiseSchedule(0)
    assert info.value.kind == "parameter error"
    with pytest.raises(RuntimeError):
        stdiff.generate_block_masks(stdiff.simulate_scalar_plant(length=200), level=25)


def test_table_construction_and_baselines():
    values = np.array([[1.0, 0.0], [math.nan, 0.0], [3.0, 0.0]])
    t = stdiff.TimeSeriesTable(["0", "1", "2"], ["x", "u"], ["state", "control"], values)
    assert len(t) == 3
    assert t.state_channels == [0]
    filled = stdiff.apply_baseline("linear", t)
    assert filled.values[1, 0] == pytest.approx(2.0)
    assert stdiff.fill_locf([1.0, math.nan, 3.0]) == [1.0, 1.0, 3.0]


def test_masks_train_impute_evaluate(tmp_path):
    table = stdiff.simulate_scalar_plant(length=600, seed=2)
    mask = stdiff.generate_block_masks(table, level=20, seed=2)
    assert 0.105 <= mask.state_rate <= 0.125
    assert np.isnan(mask.masked.values).any()

    result = stdiff.train(mask.masked, tiny_config())
    assert len(result.curve) == 3
    assert math.isfinite(result.final_validation_loss)

    path = str(tmp_path / "model.ckpt")
    stdiff.save_checkpoint(path, result.checkpoint)
    loaded = stdiff.load_checkpoint(path)
    assert loaded == result.checkpoint
    assert loaded.dims.state_dim == 1

    completed = stdiff.impute(mask.masked, loaded, samples=2, seed=3, fill_unanchorable=True)
    again = stdiff.impute(mask.masked, loaded, samples=2, seed=3, fill_unanchorable=True)
    assert completed == again
    assert not np.isnan(completed.values[:, 0]).any()
    observed = ~np.isnan(mask.masked.values)
    assert np.array_equal(completed.values[observed], mask.masked.values[observed])

    metrics = stdiff.masked_mae_rmse(completed, mask.ledger)
    assert metrics[0]["channel"] == "x1"
    assert metrics[0]["count"] == sum(1 for e in mask.ledger if e.channel in table.state_channels)
    assert metrics[0]["rmse"] >= metrics[0]["mae"] > 0


def test_csv_round_trip(tmp_path):
    table = stdiff.simulate_nonlinear_plant(length=50, seed=4)
    path = str(tmp_path / "plant.csv")
    stdiff.save_csv(path, table)
    roles = dict(zip(table.channels, table.roles))
    back = stdiff.load_csv(path, roles)
    assert back.channels == table.channels
    assert np.allclose(back.values, table.values, rtol=0, atol=1e-12)
