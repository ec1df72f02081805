"""CSV ingestion, sliding windows, normalization statistics, synthetic farms.

Long-format CSVs (one row per turbine per timestamp) are pivoted into
dense (T, N) power and (T, N, C) weather arrays.  Windowing slices those
into (history, horizon) samples, split chronologically 7:1:2 so no sample
ever looks across a split boundary, with Z-score statistics computed from
the training rows alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError, DegenerateChannelError, SchemaError
from .ioutil import atomic_path

WINDOW_CACHE_VERSION = 1

# column layouts for the two public dataset shapes plus a free-form one
SCHEMAS = {
    "sdwpf": {
        "id": "TurbID",
        "time": "Tmstamp",
        "power": "Patv",
        "weather": ["Wspd", "Wdir", "Etmp", "Itmp", "Ndir", "Pab", "Prtv"],
    },
    "gefcom": {
        "id": "ZONEID",
        "time": "TIMESTAMP",
        "power": "TARGETVAR",
        "weather": ["WS10", "WS100"],
    },
    "generic": {
        "id": "turbine_id",
        "time": "timestamp",
        "power": "power",
        "weather": None,  # every remaining column
    },
}

MAX_GAP_FILL = 3  # longest NaN run linear interpolation may bridge


@dataclass
class NormStats:
    """Z-score statistics per channel, fit on training rows only."""

    power_mean: float
    power_std: float
    weather_mean: np.ndarray
    weather_std: np.ndarray

    def normalize_power(self, x):
        return (x - self.power_mean) / self.power_std

    def denormalize_power(self, y):
        return y * self.power_std + self.power_mean

    def normalize_weather(self, w):
        return (w - self.weather_mean) / self.weather_std

    def denormalize_weather(self, y):
        return y * self.weather_std + self.weather_mean

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "power": np.array([self.power_mean, self.power_std]),
            "weather_mean": np.asarray(self.weather_mean),
            "weather_std": np.asarray(self.weather_std),
        }

    @classmethod
    def from_arrays(cls, arrays) -> "NormStats":
        power = arrays["power"]
        return cls(float(power[0]), float(power[1]),
                   np.asarray(arrays["weather_mean"]), np.asarray(arrays["weather_std"]))


def compute_stats(power, weather, valid=None, feature_names=None) -> NormStats:
    """Fit Z-score statistics on (training) rows; constant channels are refused."""
    power = np.asarray(power, dtype=float)
    weather = np.asarray(weather, dtype=float)
    if valid is not None:
        power = power[valid]
        weather = weather[valid]
    if power.size == 0:
        raise DataError("no rows available for normalization statistics")
    names = feature_names or [f"w{i}" for i in range(weather.shape[-1])]
    p_std = float(power.std())
    if p_std == 0.0:
        raise DegenerateChannelError("power channel is constant on the training split")
    w_mean = weather.reshape(-1, weather.shape[-1]).mean(axis=0)
    w_std = weather.reshape(-1, weather.shape[-1]).std(axis=0)
    for c, s in enumerate(w_std):
        if s == 0.0:
            raise DegenerateChannelError(f"weather channel {names[c]!r} is constant on the training split")
    return NormStats(float(power.mean()), p_std, w_mean, w_std)


@dataclass
class RawDataset:
    """Dense per-farm series: (T, N) power, (T, N, C) weather, aligned timestamps."""

    timestamps: np.ndarray
    power: np.ndarray
    weather: np.ndarray
    feature_names: list[str]
    turbine_ids: list[str]
    coords: np.ndarray | None = None
    missing_power: np.ndarray | None = None
    missing_weather: np.ndarray | None = None
    valid_rows: np.ndarray | None = None
    n_clamped_negative: int = 0

    def __post_init__(self):
        t = len(self.timestamps)
        if self.power.shape[0] != t or self.weather.shape[0] != t:
            raise DataError(
                f"row counts disagree: {t} timestamps vs power {self.power.shape} vs weather {self.weather.shape}"
            )
        if self.valid_rows is None:
            self.valid_rows = np.ones(t, dtype=bool)
        if self.missing_power is None:
            self.missing_power = np.zeros_like(self.power, dtype=bool)
        if self.missing_weather is None:
            self.missing_weather = np.zeros_like(self.weather, dtype=bool)

    @property
    def n_steps(self) -> int:
        return self.power.shape[0]

    @property
    def n_turbines(self) -> int:
        return self.power.shape[1]

    @property
    def n_weather(self) -> int:
        return self.weather.shape[2]


def _interpolate_gaps(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fill NaN runs up to MAX_GAP_FILL by linear interpolation, column-wise.

    Returns (filled, was_missing, row_invalid): runs longer than the limit
    and runs touching either end stay NaN and poison their rows.
    """
    arr = arr.astype(float, copy=True)
    flat = arr.reshape(arr.shape[0], -1)
    was_missing = np.isnan(flat)
    row_invalid = np.zeros(arr.shape[0], dtype=bool)
    idx = np.arange(arr.shape[0])
    for col in range(flat.shape[1]):
        mask = was_missing[:, col]
        if not mask.any():
            continue
        runs = _nan_runs(mask)
        good = ~mask
        for start, stop in runs:
            fillable = (
                stop - start <= MAX_GAP_FILL and start > 0 and stop < arr.shape[0]
            )
            if fillable:
                flat[start:stop, col] = np.interp(idx[start:stop], idx[good], flat[good, col])
            else:
                row_invalid[start:stop] = True
    return flat.reshape(arr.shape), was_missing.reshape(arr.shape), row_invalid


def _nan_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    runs = []
    start = None
    for i, flag in enumerate(mask):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(mask)))
    return runs


def load_csv(path, schema: str = "generic") -> RawDataset:
    """Parse a long-format CSV into a RawDataset; see SCHEMAS for layouts.

    Missing cells are flagged and short gaps interpolated; rows with
    unfillable gaps are marked invalid (windows over them get dropped).
    Negative power is clamped to zero with a counter.
    """
    if schema not in SCHEMAS:
        raise ConfigError(f"unknown schema {schema!r}; expected one of {sorted(SCHEMAS)}")
    layout = SCHEMAS[schema]
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"dataset file not found: {path}") from None
    except pd.errors.ParserError as exc:
        raise DataError(f"unparseable CSV {path}: {exc}") from None

    for col in (layout["id"], layout["time"], layout["power"]):
        if col not in df.columns:
            raise SchemaError(f"missing column {col!r} in {path}")
    weather_cols = layout["weather"]
    if weather_cols is None:
        reserved = {layout["id"], layout["time"], layout["power"]}
        weather_cols = [c for c in df.columns if c not in reserved]
    else:
        for col in weather_cols:
            if col not in df.columns:
                raise SchemaError(f"missing column {col!r} in {path}")

    df[layout["time"]] = pd.to_datetime(df[layout["time"]])
    power_wide = df.pivot(index=layout["time"], columns=layout["id"], values=layout["power"])
    turbine_ids = [str(c) for c in power_wide.columns]
    timestamps = power_wide.index.to_numpy()

    _check_uniform(timestamps, path)

    weather = np.stack(
        [df.pivot(index=layout["time"], columns=layout["id"], values=c).to_numpy() for c in weather_cols],
        axis=2,
    ) if weather_cols else np.zeros((len(timestamps), len(turbine_ids), 0))

    power = power_wide.to_numpy()
    n_clamped = int(np.sum(power < 0.0))
    power = np.where(np.isnan(power), power, np.maximum(power, 0.0))

    power, missing_p, bad_p = _interpolate_gaps(power)
    weather, missing_w, bad_w = _interpolate_gaps(weather)
    valid = ~(bad_p | bad_w)

    return RawDataset(
        timestamps=timestamps,
        power=power,
        weather=weather,
        feature_names=[str(c) for c in weather_cols],
        turbine_ids=turbine_ids,
        missing_power=missing_p,
        missing_weather=missing_w,
        valid_rows=valid,
        n_clamped_negative=n_clamped,
    )


def _check_uniform(timestamps, path) -> None:
    if len(timestamps) < 2:
        raise DataError(f"{path}: need at least 2 timestamps")
    diffs = np.diff(timestamps)
    if np.any(diffs <= np.timedelta64(0)):
        row = int(np.argmax(diffs <= np.timedelta64(0))) + 1
        raise DataError(f"{path}: timestamps not strictly increasing at row {row}")
    if np.any(diffs != diffs[0]):
        row = int(np.argmax(diffs != diffs[0])) + 1
        raise DataError(f"{path}: non-uniform timestamp spacing first at row {row}")


def write_csv(raw: RawDataset, path, schema: str = "generic") -> None:
    """Write a RawDataset back to the long-format CSV of the given schema."""
    layout = SCHEMAS[schema]
    weather_cols = layout["weather"] if layout["weather"] is not None else raw.feature_names
    if len(weather_cols) != raw.n_weather:
        raise ConfigError(
            f"schema {schema!r} carries {len(weather_cols)} weather columns, dataset has {raw.n_weather}"
        )
    rows = []
    for v, turbine in enumerate(raw.turbine_ids):
        frame = {
            layout["id"]: turbine,
            layout["time"]: raw.timestamps,
            layout["power"]: raw.power[:, v],
        }
        for c, col in enumerate(weather_cols):
            frame[col] = raw.weather[:, v, c]
        rows.append(pd.DataFrame(frame))
    table = pd.concat(rows, ignore_index=True)
    with atomic_path(path) as tmp:
        table.to_csv(tmp, index=False)


@dataclass
class WindowSplit:
    """Normalized samples of one split: histories, weather, targets, start rows."""

    x: np.ndarray       # (n, P, N)
    w: np.ndarray       # (n, P, N, C)
    y: np.ndarray       # (n, Q, N)
    starts: np.ndarray  # (n,) row index of the first history step

    @property
    def n_windows(self) -> int:
        return self.x.shape[0]


@dataclass
class WindowedDataset:
    train: WindowSplit
    val: WindowSplit
    test: WindowSplit
    stats: NormStats
    history_len: int
    horizon: int
    stride: int
    row_counts: tuple[int, int, int]
    timestamps: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    turbine_ids: list[str] = field(default_factory=list)

    def split(self, name: str) -> WindowSplit:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split {name!r}; expected train/val/test") from None


def window_count(rows: int, history_len: int, horizon: int, stride: int = 1) -> int:
    """Number of stride-spaced windows that fit fully inside ``rows``."""
    usable = rows - history_len - horizon + 1
    return 0 if usable <= 0 else (usable + stride - 1) // stride


def make_windows(raw: RawDataset, history_len: int, horizon: int,
                 ratio: tuple[int, int, int] = (7, 1, 2), stride: int = 1,
                 stats: NormStats | None = None,
                 max_imputed_fraction: float = 0.1) -> WindowedDataset:
    """Chronological split plus sliding windows, normalized with train statistics.

    Windows never straddle a split boundary.  Windows containing invalid
    rows, or with more than ``max_imputed_fraction`` interpolated cells,
    are dropped.  Pass ``stats`` to reuse statistics from a training run
    instead of fitting them here.
    """
    if history_len < 1 or horizon < 1 or stride < 1:
        raise ConfigError("history_len, horizon and stride must all be >= 1")
    total = raw.n_steps
    if total < history_len + horizon:
        raise DataError(f"dataset has {total} rows, too short for one {history_len}+{horizon} window")
    parts = np.asarray(ratio, dtype=float)
    if parts.min() < 0 or parts.sum() <= 0:
        raise ConfigError(f"bad split ratio {ratio}")
    n_train = int(total * parts[0] / parts.sum())
    n_val = int(total * parts[1] / parts.sum())
    n_test = total - n_train - n_val
    bounds = {"train": (0, n_train), "val": (n_train, n_train + n_val), "test": (n_train + n_val, total)}

    if stats is None:
        stats = compute_stats(
            raw.power[:n_train], raw.weather[:n_train],
            valid=raw.valid_rows[:n_train], feature_names=raw.feature_names,
        )
    power_n = stats.normalize_power(raw.power)
    weather_n = stats.normalize_weather(raw.weather)

    if raw.n_weather:
        imputed_cells = (raw.missing_power.sum(axis=1) + raw.missing_weather.sum(axis=(1, 2))) / (
            raw.n_turbines * (1 + raw.n_weather)
        )
    else:
        imputed_cells = raw.missing_power.astype(float).mean(axis=1)

    # splits may end up with zero windows (e.g. a narrow validation slice);
    # consumers that need windows raise, naming the split, at point of use
    n, c = raw.n_turbines, raw.n_weather
    splits = {}
    for name, (lo, hi) in bounds.items():
        xs, ws, ys, starts = [], [], [], []
        for s in range(lo, hi - history_len - horizon + 1, stride):
            stop = s + history_len + horizon
            if not raw.valid_rows[s:stop].all():
                continue
            if imputed_cells[s:stop].mean() > max_imputed_fraction:
                continue
            xs.append(power_n[s : s + history_len])
            ws.append(weather_n[s : s + history_len])
            ys.append(power_n[s + history_len : stop])
            starts.append(s)
        splits[name] = WindowSplit(
            x=np.stack(xs) if xs else np.zeros((0, history_len, n)),
            w=np.stack(ws) if ws else np.zeros((0, history_len, n, c)),
            y=np.stack(ys) if ys else np.zeros((0, horizon, n)),
            starts=np.asarray(starts, dtype=int),
        )

    return WindowedDataset(
        train=splits["train"], val=splits["val"], test=splits["test"],
        stats=stats, history_len=history_len, horizon=horizon, stride=stride,
        row_counts=(n_train, n_val, n_test), timestamps=raw.timestamps,
        feature_names=list(raw.feature_names), turbine_ids=list(raw.turbine_ids),
    )


@dataclass
class SynthRecipe:
    """Ground-truth construction of the synthetic farm.

    Power is diurnal + weekly sinusoids + AR(1) noise + ``coupling`` times
    the farm's wind-speed channel lagged by ``lag`` steps, so the weather
    input carries real predictive information for horizons up to ``lag``.
    """

    level: float = 4.0
    diurnal_amp: float = 1.0
    diurnal_period: int = 144
    weekly_amp: float = 0.5
    weekly_period: int = 1008
    ar_coeff: float = 0.7
    ar_noise: float = 0.2
    coupling: float = 0.8
    lag: int = 12
    wind_ar: float = 0.9
    wind_noise: float = 0.4

    def wind_std(self) -> float:
        return self.wind_noise / np.sqrt(1.0 - self.wind_ar**2)

    def power_std(self) -> float:
        return float(np.sqrt(
            self.diurnal_amp**2 / 2 + self.weekly_amp**2 / 2
            + (self.coupling * self.wind_std()) ** 2
            + self.ar_noise**2 / (1.0 - self.ar_coeff**2)
        ))

    def analytic_lagged_correlation(self) -> float:
        """corr(power_t, wind_{t-lag}) under independence of the recipe terms."""
        return self.coupling * self.wind_std() / self.power_std()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SynthRecipe":
        return cls(**json.loads(text))


def synth_generate(n_turbines: int, n_steps: int, n_weather: int = 2, seed: int = 0,
                   recipe: SynthRecipe | None = None) -> RawDataset:
    """Deterministic synthetic farm with a documented weather-power coupling.

    Channel 0 of the weather block is the coupled wind speed; remaining
    channels are uninformative sinusoid+noise distractors.  Turbines sit on
    a grid with a phase gradient, so spatial structure is real.
    """
    if n_turbines < 1 or n_steps < 8 or n_weather < 1:
        raise ConfigError("need n_turbines >= 1, n_steps >= 8, n_weather >= 1")
    recipe = recipe or SynthRecipe()
    rng = np.random.default_rng(seed)
    t = np.arange(n_steps + recipe.lag)

    side = int(np.ceil(np.sqrt(n_turbines)))
    coords = np.array([[520.0 * (v % side), 520.0 * (v // side)] for v in range(n_turbines)])
    phase = 2.0 * np.pi * (coords[:, 0] + coords[:, 1]) / (520.0 * 2 * side)

    wind = np.empty((n_steps + recipe.lag, n_turbines))
    shocks = rng.normal(scale=recipe.wind_noise, size=(n_steps + recipe.lag, n_turbines)) \
        if recipe.wind_noise > 0 else np.zeros((n_steps + recipe.lag, n_turbines))
    state = np.zeros(n_turbines)
    for i in range(n_steps + recipe.lag):
        state = recipe.wind_ar * state + shocks[i]
        wind[i] = state

    noise = np.zeros((n_steps, n_turbines))
    if recipe.ar_noise > 0:
        eps = rng.normal(scale=recipe.ar_noise, size=(n_steps, n_turbines))
        acc = np.zeros(n_turbines)
        for i in range(n_steps):
            acc = recipe.ar_coeff * acc + eps[i]
            noise[i] = acc

    steps = np.arange(n_steps)
    base = (
        recipe.diurnal_amp * np.sin(2 * np.pi * steps[:, None] / recipe.diurnal_period + phase[None, :])
        + recipe.weekly_amp * np.sin(2 * np.pi * steps[:, None] / recipe.weekly_period + 2 * phase[None, :])
    )
    # power at step i couples to wind[i]; the observed channel runs lag
    # steps ahead of that, so today's weather reading predicts power at i+lag
    power = recipe.level + base + recipe.coupling * wind[:n_steps] + noise

    weather = np.empty((n_steps, n_turbines, n_weather))
    weather[:, :, 0] = wind[recipe.lag : recipe.lag + n_steps]
    for c in range(1, n_weather):
        distract = np.sin(2 * np.pi * steps[:, None] / (100 + 37 * c) + c + phase[None, :])
        distract = distract + rng.normal(scale=0.3, size=(n_steps, n_turbines))
        weather[:, :, c] = distract

    timestamps = np.datetime64("2020-01-01T00:00:00") + np.arange(n_steps) * np.timedelta64(10, "m")
    return RawDataset(
        timestamps=timestamps,
        power=power,
        weather=weather,
        feature_names=[f"w{c}" for c in range(n_weather)],
        turbine_ids=[f"T{v:03d}" for v in range(n_turbines)],
        coords=coords,
    )


def save_windowed(windowed: WindowedDataset, path) -> None:
    """Cache a windowed dataset in a versioned binary container."""
    payload = {
        "version": np.array([WINDOW_CACHE_VERSION]),
        "meta": np.frombuffer(
            json.dumps({
                "history_len": windowed.history_len, "horizon": windowed.horizon,
                "stride": windowed.stride, "row_counts": list(windowed.row_counts),
                "feature_names": windowed.feature_names, "turbine_ids": windowed.turbine_ids,
            }).encode(), dtype=np.uint8),
        "timestamps": windowed.timestamps.astype("datetime64[ns]").astype("int64"),
    }
    for k, v in windowed.stats.to_arrays().items():
        payload[f"stats/{k}"] = v
    for name in ("train", "val", "test"):
        split = windowed.split(name)
        for fld in ("x", "w", "y", "starts"):
            payload[f"{name}/{fld}"] = getattr(split, fld)
    with atomic_path(path) as tmp:
        with open(tmp, "wb") as fh:
            np.savez(fh, **payload)


def load_windowed(path) -> WindowedDataset:
    try:
        bundle = np.load(path)
    except FileNotFoundError:
        raise DataError(f"window cache not found: {path}") from None
    if int(bundle["version"][0]) != WINDOW_CACHE_VERSION:
        raise DataError(f"window cache version {bundle['version'][0]} unsupported")
    meta = json.loads(bundle["meta"].tobytes().decode())
    stats = NormStats.from_arrays({k[len("stats/"):]: bundle[k] for k in bundle.files if k.startswith("stats/")})
    splits = {
        name: WindowSplit(
            x=bundle[f"{name}/x"], w=bundle[f"{name}/w"],
            y=bundle[f"{name}/y"], starts=bundle[f"{name}/starts"],
        )
        for name in ("train", "val", "test")
    }
    return WindowedDataset(
        train=splits["train"], val=splits["val"], test=splits["test"], stats=stats,
        history_len=meta["history_len"], horizon=meta["horizon"], stride=meta["stride"],
        row_counts=tuple(meta["row_counts"]),
        timestamps=bundle["timestamps"].astype("datetime64[ns]"),
        feature_names=meta["feature_names"], turbine_ids=meta["turbine_ids"],
    )
