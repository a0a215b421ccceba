import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmnowcast import datagen, harness, nn, opflayer
from mmnowcast.harness import ExperimentConfig, TrialResult
from mmnowcast.tensor import ConfigurationError

from oracles import rmse_percent_loop

TINY_TRAIN = nn.TrainConfig(max_epochs=2, patience=2, batch_size=32)
TINY_E2E = nn.TrainConfig(lr=1e-4, max_epochs=1, patience=1, batch_size=32)


@pytest.fixture(scope="module")
def tiny_ds():
    return datagen.build_dataset(config=datagen.DatasetConfig(seed=11, n_samples=96, n_days=5, render_resolution=64))


@pytest.fixture(scope="module")
def tiny_run(tiny_ds):
    cfg = ExperimentConfig(trials=2, train=TINY_TRAIN, e2e=TINY_E2E)
    return harness.run_experiment(cfg, tiny_ds)


# --------------------------------------------------------------- metrics

def test_rmse_examples():
    assert harness.rmse_percent([3.0, 4.0], [3.0, 4.0], 110.0) == 0.0
    assert harness.rmse_percent(np.full(7, 5.5), np.zeros(7), 110.0) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        harness.rmse_percent([1.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        harness.rmse_percent([1.0, 2.0], [1.0], 1.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(0, 120)), st.floats(1.0, 200.0), st.integers(0, 99))
def test_rmse_matches_loop(pred, rating, seed):
    truth = np.random.default_rng(seed).uniform(0, 120, pred.size)
    assert harness.rmse_percent(pred, truth, rating) == pytest.approx(rmse_percent_loop(pred, truth, rating), rel=1e-12)


def test_trial_seeds_deterministic():
    a = harness.trial_seeds(0, 5)
    assert a == harness.trial_seeds(0, 5) and len(set(a)) == 5
    assert harness.trial_seeds(0, 3) == a[:3]
    assert harness.trial_seeds(1, 3) != a[:3]


# ---------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(models=("mm-magic",))
    with pytest.raises(ConfigurationError):
        ExperimentConfig(trials=0)
    with pytest.raises(ConfigurationError):
        ExperimentConfig(models=())
    with pytest.raises(ConfigurationError):
        ExperimentConfig(renewables="hydro")
    with pytest.raises(ValueError):
        ExperimentConfig(fusion="attention")


def test_missing_files_fail_at_startup(tmp_path):
    with pytest.raises(FileNotFoundError):
        ExperimentConfig(case_path=str(tmp_path / "nope.case")).case()
    with pytest.raises(FileNotFoundError):
        ExperimentConfig(dataset_dir=str(tmp_path / "nope")).dataset()


def test_config_toml_reflects_fields():
    text = harness.config_to_toml(ExperimentConfig(trials=3, fusion="bilinear"))
    assert "[experiment]" in text and "[train]" in text and "[e2e]" in text
    assert "trials = 3" in text and 'fusion = "bilinear"' in text


# --------------------------------------------------------------- running

def test_tiny_experiment_shape(tiny_run):
    res = tiny_run
    assert len(res.trials) == len(harness.MODEL_IDS) * 2
    assert {t.model for t in res.trials} == set(harness.MODEL_IDS)
    for t in res.by_model("perfect"):
        assert t.excess_pct == 0.0 and t.mse == 0.0 and t.rmse_pct == 0.0
    for t in res.trials:
        assert t.excess_pct >= -1e-6 * 100
        assert 0 <= t.flagged <= 1
    assert set(res.perfect_train_cost) == {0, 1}


def test_persistence_metrics_match_datagen(tiny_run, tiny_ds):
    test = tiny_ds.test_idx
    pers = datagen.persistence_forecast(tiny_ds)[test] / 110.0
    mse = np.mean((pers - tiny_ds.pv_norm[test]) ** 2)
    for t in tiny_run.by_model("persistence"):
        assert t.mse == pytest.approx(mse, rel=1e-12)


def test_perfect_cost_matches_layer(tiny_run, tiny_ds):
    case = ExperimentConfig().case()
    layer = opflayer.OpfLayer(case)
    costs = [layer.system_cost(opflayer.SystemInstant(tiny_ds.load[i], [tiny_ds.p_pv[i], tiny_ds.p_wind[i]])).system
             for i in tiny_ds.test_idx]
    for t in tiny_run.by_model("perfect"):
        assert t.mean_cost == pytest.approx(np.mean(costs), rel=1e-9)


def test_e2e_history_above_perfect(tiny_run):
    for model, trial, epoch, train_loss, _ in tiny_run.histories:
        if model == "mm-e2e":
            assert train_loss >= tiny_run.perfect_train_cost[trial] * (1 - 1e-6)


def test_models_do_not_interact(tiny_ds, tiny_run):
    # a subset of the models reproduces the full run; solver warm starts may
    # differ, so equality is to round-off (byte equality is a same-config property)
    cfg = ExperimentConfig(trials=2, train=TINY_TRAIN, e2e=TINY_E2E, models=("um-base2", "mm-seq"))
    again = harness.run_experiment(cfg, tiny_ds)
    first = {(t.model, t.trial): t for t in tiny_run.trials}
    for t in again.trials:
        ref = first[(t.model, t.trial)]
        assert t.mse == ref.mse
        assert t.mean_cost == pytest.approx(ref.mean_cost, rel=1e-12)


def test_noise_features_track_constant_baseline(tiny_ds):
    rng = np.random.default_rng(5)
    noisy = dataclasses.replace(tiny_ds, images=rng.random(tiny_ds.images.shape), meteo=rng.random(tiny_ds.meteo.shape))
    cfg = ExperimentConfig(trials=1, models=("um-base1", "mm-seq"), train=nn.TrainConfig(max_epochs=6, patience=2))
    res = harness.run_experiment(cfg, noisy)
    sp = noisy.split(harness.trial_seeds(0, 1)[0])
    const = noisy.pv_norm[sp.train].mean()
    base = harness.rmse_percent(np.full(sp.test.size, const) * 110, noisy.p_pv[sp.test], 110)
    for t in res.trials:
        # nothing to learn: no better than the mean, and not far off it either
        assert t.rmse_pct >= 0.9 * base
        assert t.rmse_pct <= 1.5 * base


# ----------------------------------------------------------------- report

def _fake(models=("a", "b"), trials=3):
    rng = np.random.default_rng(0)
    return [TrialResult(m, i, 100 + i, *rng.random(3), 700 + rng.random(), rng.random(), epochs=i, flagged=0.0)
            for m in models for i in range(trials)]


def test_report_rows_and_stability(tmp_path):
    rows = _fake()
    harness.report(rows, tmp_path / "a")
    harness.report(harness.read_results_csv(tmp_path / "a" / "results.csv"), tmp_path / "b")
    lines = (tmp_path / "a" / "results.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 3
    for name in ("results.csv", "summary.csv", "report.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_single_trial_std_zero():
    s = harness.summarize(_fake(("x",), 1))
    assert s["x"]["excess_pct_std"] == 0.0 and s["x"]["n"] == 1
    with pytest.raises(ValueError):
        harness.report([], "unused")


def test_write_experiment_artifacts(tiny_run, tmp_path):
    harness.write_experiment(tiny_run, tmp_path)
    for name in ("results.csv", "summary.csv", "report.svg", "timings.txt", "histories.csv",
                 "perfect_train_cost.csv", "config.resolved.toml", "seeds.txt"):
        assert (tmp_path / name).exists()
    seeds = (tmp_path / "seeds.txt").read_text()
    assert "master = 0" in seeds and "trial1 = " in seeds


# ------------------------------------------------------------ cost surface

def test_cost_surface_operating_point(tmp_path):
    res = harness.run_cost_surface(errors=[-2.5, 0.0, 2.5], out_dir=tmp_path)
    inst = harness.surface_instant(ExperimentConfig().case())
    assert inst.load.sum() == pytest.approx(145.0) and list(inst.renewable) == [25.0, 25.0]
    assert res.surfaces[1.0][1, 1] == pytest.approx(res.base_cost, abs=1e-9)
    assert np.all(res.surfaces[0.5] >= res.surfaces[1.0] - 1e-6)
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        "surface_scale050.csv", "surface_scale050.svg", "surface_scale100.csv", "surface_scale100.svg"]
