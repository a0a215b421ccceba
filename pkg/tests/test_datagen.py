import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmnowcast import datagen
from mmnowcast.datagen import DatasetConfig, FarmSpec
from mmnowcast.tensor import ConfigurationError


@pytest.fixture(scope="module")
def weather():
    return datagen.simulate_weather(7, 6 * 24 * 8)


@pytest.fixture(scope="module")
def small():
    return datagen.build_dataset(config=DatasetConfig(seed=3, n_samples=120, n_days=6, render_resolution=64))


# ------------------------------------------------------------------ farms

def test_ratings():
    farm = FarmSpec()
    assert farm.pv_rating == pytest.approx(110.0)
    assert farm.wind_rating == pytest.approx(124.2)


def test_pv_power_examples():
    assert datagen.pv_power(1000.0) == pytest.approx(110.0)
    assert datagen.pv_power(0.0) == 0.0
    assert datagen.pv_power(500.0) == pytest.approx(55.0)
    assert datagen.pv_power(1200.0) == pytest.approx(110.0)
    with pytest.raises(ValueError):
        datagen.pv_power(-1.0)


def test_wind_power_examples():
    farm = FarmSpec()
    assert datagen.wind_power(0.0) == 0.0
    assert datagen.wind_power(farm.tanh_mid) == pytest.approx(62.1)
    assert datagen.wind_power(24.0) == pytest.approx(124.2, rel=1e-3)
    assert datagen.wind_power(26.0) == 0.0
    with pytest.raises(ValueError):
        datagen.wind_power(-0.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(3.0, 24.9), st.floats(0.0, 5.0))
def test_wind_curve_monotone_between_cut_in_and_out(v, dv):
    w2 = min(v + dv, 24.99)
    assert datagen.wind_power(w2) >= datagen.wind_power(v)


# ------------------------------------------------------------- sun and sky

def test_solstice_noon_elevation():
    day = np.datetime64("2021-06-21T00:00") + np.arange(24 * 60) * np.timedelta64(1, "m")
    el, az = datagen.solar_position(day)
    assert el.max() == pytest.approx(90.0 - 52.0 + 23.44, abs=0.5)
    noon = day[el.argmax()].astype(dt.datetime)
    # solar noon at 4.37 E on a UTC+2 clock, with the June equation of time
    assert abs((noon.hour * 60 + noon.minute) - (14 * 60 - 17 - 2)) <= 5
    assert az[el.argmax()] == pytest.approx(180.0, abs=1.0)
    assert el.min() < 0


def test_clear_sky():
    assert datagen.clear_sky_ghi(np.array([-5.0, 0.0]))[0] == 0.0
    s = np.sin(np.radians(60.0))
    assert datagen.clear_sky_ghi(np.array([60.0]))[0] == pytest.approx(1098.0 * s * np.exp(-0.057 / s))


def test_weather_relations(weather):
    assert np.all(weather.ghi[weather.elevation <= 0] == 0.0)
    clear = weather.opacity == 0
    assert clear.any()
    np.testing.assert_array_equal(weather.ghi[clear], weather.clear_ghi[clear])
    assert np.all((weather.opacity >= 0) & (weather.opacity <= 100))
    assert weather.meteo.shape == (len(weather), 8)


def test_weather_deterministic(weather):
    again = datagen.simulate_weather(7, len(weather))
    assert again.ghi.tobytes() == weather.ghi.tobytes()
    assert again.meteo.tobytes() == weather.meteo.tobytes()
    other = datagen.simulate_weather(8, len(weather))
    assert other.ghi.tobytes() != weather.ghi.tobytes()


def test_render_shape_and_determinism(weather):
    t = int(np.argmax(weather.elevation))
    a = datagen.render_sky(weather[t], 128)
    assert a.shape == (128, 128, 3) and a.min() >= 0 and a.max() <= 1
    np.testing.assert_array_equal(a, datagen.render_sky(weather[t], 128))


def test_covered_sun_not_visible(weather):
    t = int(np.argmax(weather.elevation))
    s = weather[t]
    covered = datagen.WeatherState(**{**s.__dict__, "opacity": 100.0, "coverage": 1.0})
    img = datagen.render_sky(covered, 256)
    sx, sy = datagen._sun_disc_xy(s.elevation, s.azimuth)
    c = (np.arange(256) + 0.5) / 256 * 2 - 1
    u, v = np.meshgrid(c, c)
    sun = (u - sx) ** 2 + (v - sy) ** 2 <= datagen.SUN_RADIUS ** 2
    d2 = (u - sx) ** 2 + (v - sy) ** 2
    ring = (d2 > datagen.SUN_RADIUS ** 2) & (d2 <= (3 * datagen.SUN_RADIUS) ** 2)
    assert img[sun].mean() < 0.6 * datagen.SUN_RGB.mean()
    assert img[sun].mean(axis=1).max() <= img[ring].mean(axis=1).max() + 1e-12
    clear = datagen.render_sky(datagen.WeatherState(**{**s.__dict__, "opacity": 0.0}), 256)
    np.testing.assert_allclose(clear[sun], np.broadcast_to(np.clip(datagen.SUN_RGB + 0.02, 0, 1), clear[sun].shape))


def test_night_frame_is_dark(weather):
    day_t = int(np.argmax(weather.elevation))
    night_t = int(np.argmin(weather.elevation))
    day = datagen.render_sky(weather[day_t], 128).mean()
    night = datagen.render_sky(weather[night_t], 128).mean()
    assert night < 0.1 * day


def test_opacity_darkens_image(weather):
    # one daylight window: brightness of the processed frame falls with opacity
    day = np.flatnonzero(weather.elevation > 25)[:60]
    bright = np.array([datagen._gray_block(datagen.render_sky(weather[t], 128)).mean() for t in day])
    r = np.corrcoef(weather.opacity[day], bright)[0, 1]
    assert r < -0.5


# ------------------------------------------------------------ preprocessing

def test_preprocess_examples():
    rng = np.random.default_rng(0)
    f = rng.random((128, 128, 3))
    one = datagen.preprocess_images([f])
    assert one.shape == (64, 64) and one.min() == 0.0 and one.max() == 1.0
    np.testing.assert_allclose(datagen.preprocess_images([f, f, f]), one, atol=1e-15)
    np.testing.assert_array_equal(datagen.preprocess_images([np.ones((64, 64, 3))]), np.zeros((64, 64)))


def test_preprocess_block_mean():
    g = np.arange(128 * 128, dtype=float).reshape(128, 128)
    ref = np.array([[g[2 * i:2 * i + 2, 2 * j:2 * j + 2].mean() for j in range(64)] for i in range(64)])
    ref = (ref - ref.min()) / (ref.max() - ref.min())
    np.testing.assert_allclose(datagen.preprocess_images([g]), ref, atol=1e-12)


def test_preprocess_errors():
    with pytest.raises(ConfigurationError):
        datagen.preprocess_images([])
    with pytest.raises(ConfigurationError):
        datagen.preprocess_images([np.zeros((100, 100))])
    with pytest.raises(ConfigurationError):
        datagen.preprocess_images([np.zeros((64, 64)), np.zeros((128, 128))])


# ------------------------------------------------------------------- load

def test_load_profile():
    n = 365 * 144
    load = datagen.load_profile(n, start=dt.datetime(2021, 1, 1))
    assert load.shape == (n, 6)
    assert load.sum(axis=1).max() == pytest.approx(293.0)
    np.testing.assert_allclose(load[:, 3:].max(axis=0), 293.0 / 3)
    assert np.all(load >= 0)
    with pytest.raises(ConfigurationError):
        datagen.load_profile(10, shares=[0.5, 0.6])


# ----------------------------------------------------------------- dataset

def test_split_sizes_full_scale():
    # only the index arithmetic, on a stub with the real split code
    cfg = DatasetConfig(n_samples=10_000)
    n_test = int(round(cfg.test_fraction * cfg.n_samples))
    ds = datagen.Dataset(cfg, np.zeros(10_000), None, np.zeros((10_000, 24)), *([None] * 7),
                         test_idx=np.arange(n_test))
    sp = ds.split(5)
    assert (sp.train.size, sp.val.size, sp.test.size) == (6750, 750, 2500)


def test_dataset_shapes_and_ranges(small):
    n = len(small)
    assert small.images.shape == (n, 64, 64) and small.meteo.shape == (n, 24)
    assert small.images.min() >= 0 and small.images.max() <= 1
    hours = (small.times - small.times.astype("datetime64[D]")).astype(float) / 3600
    assert np.all((hours >= 4) & (hours < 23))
    assert small.load.shape == (n, 6)


def test_targets_reproducible_from_truth(small):
    np.testing.assert_array_equal(small.p_pv, datagen.pv_power(small.ghi))
    np.testing.assert_array_equal(small.p_wind, datagen.wind_power(small.wind_speed))
    assert np.all((small.pv_norm >= 0) & (small.pv_norm <= 1))


def test_split_properties(small):
    a, b = small.split(1), small.split(2)
    np.testing.assert_array_equal(a.test, b.test)
    assert not np.array_equal(a.train, b.train)
    for sp in (a, b):
        parts = np.concatenate([sp.train, sp.val, sp.test])
        assert np.unique(parts).size == len(small) == parts.size
        m = small.normalized_meteo(sp)[sp.train]
        assert m.min() >= 0 and m.max() <= 1
        spans = small.meteo[sp.train].max(axis=0) > small.meteo[sp.train].min(axis=0)
        np.testing.assert_array_equal(m.min(axis=0)[spans], 0.0)
        np.testing.assert_array_equal(m.max(axis=0)[spans], 1.0)
        assert np.all(small.normalized_meteo(sp) <= 1.0)


def test_ghi_not_in_meteo(small):
    ghi_col = [i for i, name in enumerate(datagen.METEO_VARIABLES) if "ghi" in name]
    assert not ghi_col and small.meteo.shape[1] == 3 * len(datagen.METEO_VARIABLES)


def test_dataset_deterministic(small):
    again = datagen.build_dataset(config=small.config)
    for name in ("images", "meteo", "p_pv", "p_wind", "load", "test_idx"):
        assert getattr(again, name).tobytes() == getattr(small, name).tobytes()


def test_save_load_roundtrip(small, tmp_path):
    datagen.save_dataset(small, tmp_path / "ds")
    back = datagen.load_dataset(tmp_path / "ds")
    assert back.config == small.config
    for name in ("images", "meteo", "ghi", "ghi_prev", "wind_speed", "p_pv", "p_wind", "load", "test_idx"):
        np.testing.assert_array_equal(getattr(back, name), getattr(small, name))
    np.testing.assert_array_equal(back.times, small.times)
    with pytest.raises(FileNotFoundError):
        datagen.load_dataset(tmp_path / "missing")


def test_config_errors():
    with pytest.raises(ConfigurationError):
        DatasetConfig(n_samples=10)
    with pytest.raises(ConfigurationError):
        DatasetConfig(render_resolution=100)
    with pytest.raises(ConfigurationError):
        datagen.build_dataset(config=DatasetConfig(n_samples=5000, n_days=2))


# ------------------------------------------------------------- persistence

def test_persistence_examples():
    np.testing.assert_array_equal(datagen.persistence_series(np.full(10, 600.0)), datagen.pv_power(np.full(10, 600.0)))
    ghi = np.array([0.0, 0.0, 800.0, 800.0, 800.0])
    pred = datagen.persistence_series(ghi)
    err = pred - datagen.pv_power(ghi)
    np.testing.assert_allclose(err, [0, 0, -88.0, 0, 0])


def test_persistence_forecast(small):
    np.testing.assert_array_equal(datagen.persistence_forecast(small), datagen.pv_power(small.ghi_prev))
    np.testing.assert_array_equal(datagen.persistence_forecast(small, "Wind"), datagen.wind_power(small.wind_speed_prev))
    mse = np.mean((datagen.persistence_forecast(small) / 110 - small.pv_norm) ** 2)
    assert 0 < mse < 0.05
