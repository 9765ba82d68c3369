import math

import numpy as np
import pytest

from floorgate.errors import ConfigError
from floorgate.nuisance import (BinnedMeanModel, LoggerConfig, ModelConfig, calibration_bins,
                                calibration_report, fit_outcome_models, max_gap, simulate_logger)
from floorgate.panel import chronological_split
from floorgate.replay import row_rewards
from floorgate.synthgen import GenConfig, generate_panel

from conftest import catalog_for, make_panel


def test_constant_outcome_predicts_constant(rng):
    ctx = rng.integers(0, 5, size=(500, 3))
    for smoothing in (0.0, 1.0):
        m = BinnedMeanModel.fit(ctx, np.full(500, 7.0), smoothing)
        assert np.all(m.predict(ctx) == 7.0)
        assert np.all(m.predict(ctx + 100) == 7.0)


def test_two_segment_identity(small_catalog):
    rows = [{"region": 1, "bid": 300, "floor": 50, "pay": 100, "filled": 1}] * 5 + \
           [{"region": 2, "bid": 300, "floor": 50, "pay": 200, "filled": 1}] * 5
    p = make_panel(rows)
    models = fit_outcome_models(p, small_catalog, ["P0"], ModelConfig(keys=("region",)))
    pred = models.predict_reward(p, "P0")
    assert pred.tolist() == [100.0] * 5 + [200.0] * 5


def test_fill_bins_recover_phi():
    phi = {1: 0.1, 2: 0.4, 3: 0.7}
    p = generate_panel(GenConfig(n_rows=60_000, fill_prob=phi, floor_mode="below_bid", seed=9))
    cat = catalog_for(p)
    models = fit_outcome_models(p, cat, ["P0"], ModelConfig(keys=("exchange",)))
    for ex, f in phi.items():
        n = int((p.exchange == ex).sum())
        got = models.fill_model.predict(np.array([[ex]]))[0]
        assert abs(got - f) <= 3 * math.sqrt(f * (1 - f) / n)


def test_unseen_context_falls_back_to_global(small_panel, small_catalog):
    models = fit_outcome_models(small_panel, small_catalog, ["P0"])
    unseen = make_panel([{"exchange": 999, "region": 999}])
    assert models.predict_fill(unseen)[0] == pytest.approx(small_panel.filled.mean())


def test_models_are_deterministic(small_panel, small_catalog):
    a = fit_outcome_models(small_panel, small_catalog, ["P0", "P18"])
    b = fit_outcome_models(small_panel, small_catalog, ["P0", "P18"])
    assert a.same_as(b)


def test_calibration_constant_gap_zero():
    bins = calibration_bins(np.full(100, 0.3), np.full(100, 0.3), 10)
    assert max_gap(bins) == 0.0


def test_calibration_halved_predictions(rng):
    truth = rng.uniform(0, 1, 20_000)
    y = (rng.uniform(0, 1, 20_000) < truth).astype(float)
    good = calibration_bins(truth, y, 10)
    bad = calibration_bins(truth * 0.5, y, 10)
    for b in good:
        assert abs(b.mean_prediction - b.mean_outcome) <= 4 * math.sqrt(0.25 / b.count)
    for b in bad:
        assert b.mean_outcome - b.mean_prediction == pytest.approx(0.5 * b.mean_outcome, abs=0.03)


def test_calibration_more_bins_than_rows():
    with pytest.warns(UserWarning):
        bins = calibration_bins([0.1, 0.2], [0, 1], 10)
    assert len(bins) == 2


def test_calibration_report(small_panel, small_catalog):
    train, _, test = chronological_split(small_panel)
    models = fit_outcome_models(train, small_catalog, ["P0", "P18"])
    rep = calibration_report(models, test)
    assert set(rep.bins) == {"fill", "ctr", "pay", "value"}
    assert all(sum(b.count for b in rep.bins[k]) > 0 for k in rep.bins)
    assert rep.max_gap["fill"] < 0.1


def test_single_policy_logger(small_panel, small_catalog):
    logged = simulate_logger(small_panel, ["P18"], small_catalog)
    assert np.all(logged.propensities == 1.0)
    assert np.all(logged.actions == 0)
    assert np.array_equal(logged.rewards, row_rewards(small_panel, small_catalog["P18"],
                                                      small_catalog))


def test_uniform_logger_frequencies(small_catalog):
    p = generate_panel(GenConfig(n_rows=30_000, seed=2))
    logged = simulate_logger(p, ["P1", "P2", "P3"], catalog_for(p), seed=4)
    assert np.allclose(logged.probs, 1 / 3)
    sd = math.sqrt(30_000 * (1 / 3) * (2 / 3))
    for a in range(3):
        assert abs(int((logged.actions == a).sum()) - 10_000) <= 3 * sd


def test_tilted_logger(small_panel, small_catalog):
    cfg = LoggerConfig(epsilon=0.2, tilt=0.25)
    probs = cfg.probabilities(["P0", "P1", "P2", "P3"])
    assert probs.sum() == pytest.approx(1.0)
    assert probs[0] == pytest.approx(0.05 + 0.8 * (0.75 / 4 + 0.25))
    assert np.allclose(probs[1:], 0.05 + 0.8 * 0.75 / 4)


def test_logger_deterministic(small_panel, small_catalog):
    a = simulate_logger(small_panel, ["P0", "P17", "P18"], small_catalog, seed=3)
    b = simulate_logger(small_panel, ["P0", "P17", "P18"], small_catalog, seed=3)
    assert np.array_equal(a.actions, b.actions) and np.array_equal(a.rewards, b.rewards)
    assert np.array_equal(a.propensities, b.propensities)
    c = simulate_logger(small_panel, ["P0", "P17", "P18"], small_catalog, seed=4)
    assert not np.array_equal(a.actions, c.actions)


def test_logger_rewards_follow_replay(small_panel, small_catalog):
    ids = ["P0", "P5", "P18"]
    logged = simulate_logger(small_panel, ids, small_catalog, seed=1)
    for a, pid in enumerate(ids):
        m = logged.actions == a
        assert np.array_equal(logged.rewards[m],
                              row_rewards(small_panel, small_catalog[pid], small_catalog)[m])


def test_logger_config_validation(small_panel, small_catalog):
    with pytest.raises(ConfigError):
        LoggerConfig(epsilon=0.0)
    with pytest.raises(ConfigError):
        simulate_logger(small_panel, [], small_catalog)
    with pytest.raises(ConfigError):
        simulate_logger(small_panel, ["P0", "P1"], small_catalog,
                        LoggerConfig(epsilon=0.001, tilt=1.0, min_propensity=0.01))
