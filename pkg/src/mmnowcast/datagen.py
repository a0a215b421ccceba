"""Synthetic sky images, meteorological series and renewable output.

A single drifting cloud layer (two-octave value noise) drives both
modalities: the sky camera sees it directly, and the cloud opacity on the
line of sight to the sun attenuates clear-sky GHI. The meteo station reports
a smoothed, noisy opacity reading plus correlated weather variables.
"""

from __future__ import annotations

import csv
import datetime as dt
import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal, stats

from . import tensor as T
from .grid import GridCase, builtin_ieee6
from .tensor import ConfigurationError

__all__ = [
    "METEO_VARIABLES",
    "FarmSpec",
    "WeatherState",
    "WeatherSeries",
    "DatasetConfig",
    "Dataset",
    "Split",
    "simulate_weather",
    "solar_position",
    "clear_sky_ghi",
    "render_sky",
    "preprocess_images",
    "pv_power",
    "wind_power",
    "load_profile",
    "build_dataset",
    "persistence_forecast",
    "persistence_series",
    "save_dataset",
    "load_dataset",
]

METEO_VARIABLES = (
    "time_s", "air_temp_c", "cloud_opacity_pct", "rel_humidity_pct",
    "wind_dir_deg", "wind_speed_ms", "precip_water_kgm2", "pressure_hpa",
)
STEP_MINUTES = 10
DEFAULT_START = dt.datetime(2021, 5, 1, 0, 0)
LATITUDE, LONGITUDE, UTC_OFFSET = 52.0, 4.37, 2.0  # Delft, local clock UTC+2
LUMA = np.array([0.299, 0.587, 0.114])
ATTENUATION = 0.75  # GHI = clear * (1 - 0.75 * opacity / 100)


# --------------------------------------------------------------------- farms

@dataclass(frozen=True)
class FarmSpec:
    panel_rated_w: float = 440.0
    n_panels: int = 250_000
    panel_area_m2: float = 2.2  # documentation only, not used by the power model
    n_turbines: int = 36
    turbine_rated_mw: float = 3.45
    cut_in: float = 3.0
    rated_speed: float = 13.0
    cut_out: float = 25.0
    tanh_slope: float = 0.45
    tanh_mid: float = 8.5

    @property
    def pv_rating(self) -> float:
        return self.panel_rated_w * self.n_panels / 1e6

    @property
    def wind_rating(self) -> float:
        return self.n_turbines * self.turbine_rated_mw


def pv_power(ghi, farm: FarmSpec = FarmSpec()):
    """PV plant output in MW, linear in GHI and clipped at the plant rating."""
    ghi = np.asarray(ghi, dtype=float)
    if np.any(ghi < 0):
        raise ValueError("GHI must be non-negative")
    out = np.minimum(ghi / 1000.0 * farm.panel_rated_w * farm.n_panels / 1e6, farm.pv_rating)
    return out if out.ndim else float(out)


def wind_power(speed, farm: FarmSpec = FarmSpec()):
    """Wind plant output in MW from a tanh turbine curve with cut-in/cut-out."""
    v = np.asarray(speed, dtype=float)
    if np.any(v < 0):
        raise ValueError("wind speed must be non-negative")
    turbine = 0.5 * farm.turbine_rated_mw * (1.0 + np.tanh(farm.tanh_slope * (v - farm.tanh_mid)))
    turbine = np.where((v >= farm.cut_in) & (v < farm.cut_out), turbine, 0.0)
    out = farm.n_turbines * turbine
    return out if out.ndim else float(out)


# ------------------------------------------------------------ solar geometry

def solar_position(times: np.ndarray, lat: float = LATITUDE, lon: float = LONGITUDE,
                   utc_offset: float = UTC_OFFSET) -> tuple[np.ndarray, np.ndarray]:
    """Elevation and azimuth (degrees, azimuth clockwise from north).

    ``times`` are local clock times as ``datetime64``.
    """
    times = np.asarray(times, dtype="datetime64[s]")
    doy = (times.astype("datetime64[D]") - times.astype("datetime64[Y]")).astype(int) + 1
    hour = (times - times.astype("datetime64[D]")).astype(float) / 3600.0
    decl = np.radians(23.44) * np.sin(2 * np.pi * (284 + doy) / 365.0)
    b = 2 * np.pi * (doy - 81) / 364.0
    eot = 9.87 * np.sin(2 * b) - 7.53 * np.cos(b) - 1.5 * np.sin(b)  # minutes
    solar_time = hour + (4.0 * (lon - 15.0 * utc_offset) + eot) / 60.0
    ha = np.radians(15.0 * (solar_time - 12.0))
    phi = np.radians(lat)
    sin_el = np.sin(phi) * np.sin(decl) + np.cos(phi) * np.cos(decl) * np.cos(ha)
    el = np.degrees(np.arcsin(np.clip(sin_el, -1, 1)))
    az = np.degrees(np.arctan2(np.sin(ha), np.cos(ha) * np.sin(phi) - np.tan(decl) * np.cos(phi))) + 180.0
    return el, az % 360.0


def clear_sky_ghi(elevation) -> np.ndarray:
    """Haurwitz clear-sky model; 0 when the sun is below the horizon."""
    s = np.sin(np.radians(np.asarray(elevation, dtype=float)))
    pos = s > 0
    out = np.zeros_like(s)
    out[pos] = 1098.0 * s[pos] * np.exp(-0.057 / s[pos])
    return out


# ------------------------------------------------------------- cloud layer

LATTICE = 48
SKY_SPAN = 3.0  # lattice cells from zenith to horizon in the camera view
OCTAVES = ((1.0, 0.65), (2.0, 0.35))  # (frequency, weight)
EDGE = 0.12  # width of the cloud-density ramp in noise units


@functools.lru_cache(maxsize=8)
def _lattices(seed: int) -> tuple[np.ndarray, ...]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    return tuple(rng.random((LATTICE, LATTICE)) for _ in OCTAVES)


def _smooth(t):
    return t * t * (3.0 - 2.0 * t)


def _weights(coord: np.ndarray) -> np.ndarray:
    """Interpolation matrix (len(coord) x LATTICE) for periodic value noise."""
    i0 = np.floor(coord).astype(int)
    w = _smooth(coord - i0)
    W = np.zeros((coord.size, LATTICE))
    rows = np.arange(coord.size)
    np.add.at(W, (rows, i0 % LATTICE), 1.0 - w)
    np.add.at(W, (rows, (i0 + 1) % LATTICE), w)
    return W


def _noise_grid(seed: int, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    out = 0.0
    for lat, (freq, weight) in zip(_lattices(seed), OCTAVES):
        out = out + weight * (_weights(ys * freq) @ lat @ _weights(xs * freq).T)
    return out


def _noise_points(seed: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros(np.shape(x))
    for lat, (freq, weight) in zip(_lattices(seed), OCTAVES):
        fx, fy = x * freq, y * freq
        ix, iy = np.floor(fx).astype(int), np.floor(fy).astype(int)
        wx, wy = _smooth(fx - ix), _smooth(fy - iy)
        v = lambda a, b: lat[(iy + b) % LATTICE, (ix + a) % LATTICE]  # noqa: E731
        top = v(0, 0) * (1 - wx) + v(1, 0) * wx
        bot = v(0, 1) * (1 - wx) + v(1, 1) * wx
        out += weight * (top * (1 - wy) + bot * wy)
    return out


def _density(noise, coverage):
    threshold = 0.15 + 0.7 * (1.0 - coverage)
    return np.clip((noise - threshold) / EDGE, 0.0, 1.0)


def _sun_disc_xy(elevation, azimuth):
    """Sun position in the unit fisheye disc (x east, y south in image rows)."""
    r = (90.0 - np.asarray(elevation)) / 90.0
    a = np.radians(azimuth)
    return r * np.sin(a), -r * np.cos(a)


# ------------------------------------------------------------------ weather

@dataclass(frozen=True)
class WeatherState:
    time: np.datetime64
    elevation: float
    azimuth: float
    clear_ghi: float
    ghi: float
    coverage: float  # fraction of sky clouded, [0, 1]
    opacity: float  # true opacity on the sun line of sight, %
    drift: tuple[float, float]  # cloud layer velocity, lattice cells / step
    offset: tuple[float, float]  # cloud layer position
    hub_wind: float  # m/s at hub height
    meteo: np.ndarray  # the 8 station variables, METEO_VARIABLES order
    field_seed: int = 0


@dataclass
class WeatherSeries:
    """Column-oriented weather record; indexing yields :class:`WeatherState`."""

    times: np.ndarray
    elevation: np.ndarray
    azimuth: np.ndarray
    clear_ghi: np.ndarray
    ghi: np.ndarray
    coverage: np.ndarray
    opacity: np.ndarray
    drift: np.ndarray  # (n, 2)
    offset: np.ndarray  # (n, 2)
    hub_wind: np.ndarray
    meteo: np.ndarray  # (n, 8)
    field_seed: int

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, i: int) -> WeatherState:
        return WeatherState(
            time=self.times[i], elevation=float(self.elevation[i]), azimuth=float(self.azimuth[i]),
            clear_ghi=float(self.clear_ghi[i]), ghi=float(self.ghi[i]), coverage=float(self.coverage[i]),
            opacity=float(self.opacity[i]), drift=tuple(self.drift[i]), offset=tuple(self.offset[i]),
            hub_wind=float(self.hub_wind[i]), meteo=self.meteo[i].copy(), field_seed=self.field_seed,
        )


def _ar1(rng, n: int, rho: float, sd: float) -> np.ndarray:
    """Stationary AR(1) with marginal standard deviation ``sd``."""
    e = rng.normal(0.0, sd * np.sqrt(1 - rho * rho), n)
    e[0] = rng.normal(0.0, sd)
    return signal.lfilter([1.0], [1.0, -rho], e)


def _rho(hours: float) -> float:
    return float(np.exp(-STEP_MINUTES / 60.0 / hours))


def simulate_weather(seed: int, n_steps: int, start: dt.datetime = DEFAULT_START) -> WeatherSeries:
    if n_steps < 1:
        raise ConfigurationError("n_steps must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    times = np.datetime64(start, "s") + np.arange(n_steps) * np.timedelta64(STEP_MINUTES * 60, "s")
    el, az = solar_position(times)
    clear = clear_sky_ghi(el)
    doy = (times.astype("datetime64[D]") - times.astype("datetime64[Y]")).astype(int) + 1
    hour = (times - times.astype("datetime64[D]")).astype(float) / 3600.0
    season = np.sin(2 * np.pi * (doy - 110) / 365.0)  # +1 around late July

    coverage = 1.0 / (1.0 + np.exp(-(_ar1(rng, n_steps, _rho(4.0), 1.6) + 0.1 - 0.4 * season)))
    latent = _ar1(rng, n_steps, _rho(8.0), 1.0)
    hub = stats.weibull_min.ppf(stats.norm.cdf(latent), 2.0, scale=8.5)
    wind_dir = (240.0 + _ar1(rng, n_steps, _rho(12.0), 70.0)) % 360.0
    # clouds travel downwind; direction is where the wind comes from
    heading = np.radians(wind_dir + 180.0)
    speed = 0.015 * hub
    drift = np.column_stack([speed * np.sin(heading), -speed * np.cos(heading)])
    offset = np.cumsum(drift, axis=0) + rng.uniform(0, LATTICE, 2)

    sx, sy = _sun_disc_xy(el, az)
    noise = _noise_points(seed, offset[:, 0] + SKY_SPAN * sx, offset[:, 1] + SKY_SPAN * sy)
    opacity = 100.0 * _density(noise, coverage)
    ghi = clear * (1.0 - ATTENUATION * opacity / 100.0)

    temp = (10.0 + 7.0 * season + 4.0 * np.cos(2 * np.pi * (hour - 15.0) / 24.0)
            - 3.0 * coverage + _ar1(rng, n_steps, _rho(6.0), 1.5))
    # station opacity: lagged exponential smoothing of the line-of-sight value plus sensor noise
    smoothed = signal.lfilter([0.5], [1.0, -0.5], opacity)
    opacity_meas = np.clip(smoothed + rng.normal(0.0, 8.0, n_steps), 0.0, 100.0)
    humidity = np.clip(75.0 - 2.0 * (temp - 10.0) + 15.0 * coverage + _ar1(rng, n_steps, _rho(6.0), 6.0), 0.0, 100.0)
    precip = np.maximum(8.0 + 0.9 * (temp + 5.0) * humidity / 100.0 + _ar1(rng, n_steps, _rho(12.0), 2.0), 0.0)
    pressure = 1013.0 - 6.0 * coverage + _ar1(rng, n_steps, _rho(24.0), 8.0)
    station_wind = np.maximum(0.75 * hub + rng.normal(0.0, 0.5, n_steps), 0.0)
    meteo = np.column_stack([hour * 3600.0, temp, opacity_meas, humidity, wind_dir, station_wind, precip, pressure])
    return WeatherSeries(times=times, elevation=el, azimuth=az, clear_ghi=clear, ghi=ghi, coverage=coverage,
                         opacity=opacity, drift=drift, offset=offset, hub_wind=hub, meteo=meteo, field_seed=seed)


# ----------------------------------------------------------------- rendering

SKY_RGB = np.array([0.30, 0.50, 0.85])
CLOUD_RGB = np.array([0.42, 0.42, 0.46])
SUN_RGB = np.array([1.0, 1.0, 0.95])
SUN_RADIUS = 0.05


def render_sky(state: WeatherState, resolution: int = 1536) -> np.ndarray:
    """Fisheye sky image (resolution x resolution x 3, values in [0, 1])."""
    c = (np.arange(resolution) + 0.5) / resolution * 2.0 - 1.0
    u, v = np.meshgrid(c, c)  # u east, v south (image rows grow downwards)
    disc = u * u + v * v <= 1.0
    day = float(np.clip(np.sin(np.radians(state.elevation)) * 6.0 + 0.15, 0.0, 1.0))
    if state.elevation <= -6.0:
        day = 0.0
    noise = _noise_grid(state.field_seed, state.offset[0] + SKY_SPAN * c, state.offset[1] + SKY_SPAN * c)
    dens = _density(noise, state.coverage)[..., None]
    sx, sy = _sun_disc_xy(state.elevation, state.azimuth)
    d2 = (u - sx) ** 2 + (v - sy) ** 2
    # forward scattering around the sun, dimmed when the sun itself is covered
    direct = 1.0 - 0.95 * state.opacity / 100.0
    glow = (1.1 * direct * np.exp(-d2 / 0.4))[..., None]
    sky = SKY_RGB * (0.55 + 0.45 * (u * u + v * v))[..., None] + glow * SUN_RGB
    # thick clouds are darker
    cloud = CLOUD_RGB * (1.0 - 0.5 * dens) + 0.3 * glow * SUN_RGB
    img = (1.0 - dens) * sky + dens * cloud
    if state.elevation > 0:
        # the disc shows through in proportion to the line-of-sight opacity
        o = state.opacity / 100.0
        covered = 0.5 * CLOUD_RGB + 0.3 * glow * SUN_RGB
        sun = (d2 <= SUN_RADIUS * SUN_RADIUS)[..., None]
        img = np.where(sun, (1.0 - o) * SUN_RGB + o * covered, img)
    img = np.clip(img * day + 0.02, 0.0, 1.0)
    return np.where(disc[..., None], img, 0.0)


def _gray_block(frame: np.ndarray, out: int = 64) -> np.ndarray:
    frame = np.asarray(frame, dtype=float)
    if frame.ndim == 3:
        frame = frame @ LUMA
    h, w = frame.shape
    if h % out or w % out:
        raise ConfigurationError(f"frame size {h}x{w} is not a multiple of {out}")
    return frame.reshape(out, h // out, out, w // out).mean(axis=(1, 3))


def _minmax(img: np.ndarray) -> np.ndarray:
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def preprocess_images(frames, out: int = 64) -> np.ndarray:
    """Grayscale, block-mean downscale, average the frames, min-max to [0, 1]."""
    frames = list(frames)
    if not frames:
        raise ConfigurationError("need at least one frame")
    shapes = {np.shape(f) for f in frames}
    if len(shapes) != 1:
        raise ConfigurationError(f"frames differ in size: {sorted(shapes)}")
    return _minmax(np.mean([_gray_block(f, out) for f in frames], axis=0))


# ---------------------------------------------------------------------- load

def load_profile(n_steps: int, max_load: float = 293.0, shares=None, start: dt.datetime = DEFAULT_START) -> np.ndarray:
    """Per-bus load (n_steps x n_bus): morning and evening peaks, higher in winter."""
    shares = builtin_ieee6().load_shares() if shares is None else np.asarray(shares, dtype=float)
    if abs(shares.sum() - 1.0) > 1e-9 or np.any(shares < 0):
        raise ConfigurationError(f"load shares must be non-negative and sum to 1, got {shares.sum()!r}")
    times = np.datetime64(start, "s") + np.arange(n_steps) * np.timedelta64(STEP_MINUTES * 60, "s")
    hour = (times - times.astype("datetime64[D]")).astype(float) / 3600.0
    doy = (times.astype("datetime64[D]") - times.astype("datetime64[Y]")).astype(int) + 1
    daily = 0.55 + 0.25 * np.exp(-((hour - 8.0) / 1.8) ** 2) + 0.42 * np.exp(-((hour - 19.0) / 2.2) ** 2)
    total = daily * (1.0 + 0.12 * np.cos(2 * np.pi * (doy - 15) / 365.0))
    total = total / total.max() * max_load
    return total[:, None] * shares[None, :]


# ------------------------------------------------------------------- dataset

@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    n_samples: int = 10_000
    n_days: int = 300
    render_resolution: int = 192  # 1536 reproduces camera size; 192 keeps desk runs fast
    max_load: float = 293.0
    test_fraction: float = 0.25
    val_fraction: float = 0.075
    start: dt.datetime = DEFAULT_START
    farm: FarmSpec = field(default_factory=FarmSpec)

    def __post_init__(self):
        if self.n_samples < 40:
            raise ConfigurationError("n_samples must be >= 40")
        if self.render_resolution % 64:
            raise ConfigurationError("render_resolution must be a multiple of 64")


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    meteo_min: np.ndarray
    meteo_max: np.ndarray


@dataclass
class Dataset:
    config: DatasetConfig
    times: np.ndarray  # datetime64[s] at the target step
    images: np.ndarray  # (N, 64, 64)
    meteo: np.ndarray  # (N, 24) raw; [t-1 vars, t-2 vars, t-3 vars]
    ghi: np.ndarray
    ghi_prev: np.ndarray
    wind_speed: np.ndarray  # hub height, m/s
    wind_speed_prev: np.ndarray
    p_pv: np.ndarray  # MW
    p_wind: np.ndarray
    load: np.ndarray  # (N, n_bus) MW
    test_idx: np.ndarray

    def __len__(self) -> int:
        return self.times.size

    @property
    def farm(self) -> FarmSpec:
        return self.config.farm

    @property
    def pv_norm(self) -> np.ndarray:
        return self.p_pv / self.farm.pv_rating

    @property
    def wind_norm(self) -> np.ndarray:
        return self.p_wind / self.farm.wind_rating

    def split(self, trial_seed: int) -> Split:
        """Fixed test set; train/validation shuffled by ``trial_seed``."""
        n = len(self)
        rest = np.setdiff1d(np.arange(n), self.test_idx)
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, trial_seed, 3]))
        rest = rest[rng.permutation(rest.size)]
        n_val = int(round(self.config.val_fraction * n))
        val, train = np.sort(rest[:n_val]), np.sort(rest[n_val:])
        lo, hi = self.meteo[train].min(axis=0), self.meteo[train].max(axis=0)
        return Split(train=train, val=val, test=self.test_idx.copy(), meteo_min=lo, meteo_max=hi)

    def normalized_meteo(self, split: Split) -> np.ndarray:
        span = split.meteo_max - split.meteo_min
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (self.meteo - split.meteo_min) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)


def build_dataset(seed: int = 0, n_samples: int = 10_000, config: DatasetConfig | None = None,
                  case: GridCase | None = None) -> Dataset:
    cfg = config if config is not None else DatasetConfig(seed=seed, n_samples=n_samples)
    case = case if case is not None else builtin_ieee6()
    n_steps = cfg.n_days * 24 * 60 // STEP_MINUTES
    w = simulate_weather(cfg.seed, n_steps, cfg.start)
    hour = (w.times - w.times.astype("datetime64[D]")).astype(float) / 3600.0
    eligible = np.flatnonzero((hour >= 4.0) & (hour < 23.0) & (w.elevation > 0.0) & (np.arange(n_steps) >= 3))
    if eligible.size < cfg.n_samples:
        raise ConfigurationError(f"only {eligible.size} daytime steps available for {cfg.n_samples} samples")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    steps = np.sort(rng.choice(eligible, cfg.n_samples, replace=False))

    cache: dict[int, np.ndarray] = {}

    def frame(t):
        if t not in cache:
            cache[t] = _gray_block(render_sky(w[t], cfg.render_resolution))
        return cache[t]

    images = np.empty((cfg.n_samples, 64, 64))
    for i, t in enumerate(steps):
        images[i] = _minmax((frame(t - 1) + frame(t - 2) + frame(t - 3)) / 3.0)
        for old in [k for k in cache if k < t - 3]:
            del cache[old]
    meteo = np.concatenate([w.meteo[steps - lag] for lag in (1, 2, 3)], axis=1)
    loads = load_profile(n_steps, cfg.max_load, case.load_shares(), cfg.start)[steps]
    n_test = int(round(cfg.test_fraction * cfg.n_samples))
    test = np.sort(rng.permutation(cfg.n_samples)[:n_test])
    return Dataset(
        config=cfg, times=w.times[steps], images=images, meteo=meteo, ghi=w.ghi[steps], ghi_prev=w.ghi[steps - 1],
        wind_speed=w.hub_wind[steps], wind_speed_prev=w.hub_wind[steps - 1], p_pv=pv_power(w.ghi[steps], cfg.farm),
        p_wind=wind_power(w.hub_wind[steps], cfg.farm), load=loads, test_idx=test,
    )


def persistence_series(ghi, farm: FarmSpec = FarmSpec()) -> np.ndarray:
    """PV forecast from the previous step's GHI; the first step copies itself."""
    ghi = np.asarray(ghi, dtype=float)
    prev = np.concatenate([ghi[:1], ghi[:-1]])
    return pv_power(prev, farm)


def persistence_forecast(dataset: Dataset, kind: str = "PV") -> np.ndarray:
    """Persistence forecast (MW) for every sample from the previous step's
    GHI (``kind="PV"``) or hub wind speed (``kind="Wind"``)."""
    if kind == "Wind":
        return wind_power(dataset.wind_speed_prev, dataset.farm)
    return pv_power(dataset.ghi_prev, dataset.farm)


# ----------------------------------------------------------------------- i/o

_TRUTH_COLUMNS = ("timestamp", "ghi_wm2", "ghi_prev_wm2", "wind_speed_ms", "wind_speed_prev_ms", "p_pv_mw", "p_wind_mw")


def save_dataset(ds: Dataset, directory) -> Path:
    """Write ``manifest.txt``, ``images.gtnsr``, ``meteo.gtnsr``, ``test_idx.gtnsr`` and ``truth.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cfg = ds.config
    farm = cfg.farm
    manifest = {
        "format": "mmnowcast-dataset-1",
        "seed": cfg.seed, "n_samples": cfg.n_samples, "n_days": cfg.n_days,
        "render_resolution": cfg.render_resolution, "max_load": repr(cfg.max_load),
        "test_fraction": repr(cfg.test_fraction), "val_fraction": repr(cfg.val_fraction),
        "start": cfg.start.isoformat(),
        **{f"farm.{k}": repr(v) for k, v in farm.__dict__.items()},
        "meteo_columns": ",".join(f"{v}@t-{lag}" for lag in (1, 2, 3) for v in METEO_VARIABLES),
    }
    (d / "manifest.txt").write_text("".join(f"{k} = {v}\n" for k, v in manifest.items()))
    T.save_tensors(d / "images.gtnsr", [ds.images])
    T.save_tensors(d / "meteo.gtnsr", [ds.meteo])
    T.save_tensors(d / "test_idx.gtnsr", [ds.test_idx.astype(float)])
    with open(d / "truth.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(list(_TRUTH_COLUMNS) + [f"load_bus{j + 1}_mw" for j in range(ds.load.shape[1])])
        for i in range(len(ds)):
            wr.writerow([str(ds.times[i]), repr(float(ds.ghi[i])), repr(float(ds.ghi_prev[i])),
                         repr(float(ds.wind_speed[i])), repr(float(ds.wind_speed_prev[i])), repr(float(ds.p_pv[i])), repr(float(ds.p_wind[i]))]
                        + [repr(float(x)) for x in ds.load[i]])
    return d


def _parse_manifest(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip() and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    if not (d / "manifest.txt").exists():
        raise FileNotFoundError(f"no dataset at {d} (manifest.txt missing)")
    m = _parse_manifest((d / "manifest.txt").read_text())
    farm_kwargs = {}
    for k, v in m.items():
        if k.startswith("farm."):
            name = k[5:]
            farm_kwargs[name] = int(v) if name in ("n_panels", "n_turbines") else float(v)
    cfg = DatasetConfig(seed=int(m["seed"]), n_samples=int(m["n_samples"]), n_days=int(m["n_days"]),
                        render_resolution=int(m["render_resolution"]), max_load=float(m["max_load"]),
                        test_fraction=float(m["test_fraction"]), val_fraction=float(m["val_fraction"]),
                        start=dt.datetime.fromisoformat(m["start"]), farm=FarmSpec(**farm_kwargs))
    with open(d / "truth.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    cols = list(zip(*rows))
    num = lambda j: np.array([float(x) for x in cols[j]])  # noqa: E731
    return Dataset(
        config=cfg, times=np.array(cols[0], dtype="datetime64[s]"), images=T.load_tensors(d / "images.gtnsr")[0],
        meteo=T.load_tensors(d / "meteo.gtnsr")[0], ghi=num(1), ghi_prev=num(2), wind_speed=num(3), wind_speed_prev=num(4),
        p_pv=num(5), p_wind=num(6), load=np.column_stack([num(j) for j in range(7, len(cols))]),
        test_idx=T.load_tensors(d / "test_idx.gtnsr")[0].astype(int),
    )
