"""CSV ingestion, chronological splits, standardisation, causal sample construction."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .concepts import N_CONCEPTS, soft_target_matrix
from .errors import DataError
from .physics import euler_ode_series

_INTERVAL_NAMES = {
    600.0: "10min",
    900.0: "15min",
    3600.0: "hourly",
    86400.0: "daily",
    7 * 86400.0: "weekly",
}


@dataclass
class RawDataset:
    name: str
    columns: list[str]
    timestamps: np.ndarray  # float seconds since epoch, or integer index
    values: np.ndarray  # [rows, columns]
    interval: float | None
    interval_name: str

    def series(self, channel: str) -> "Series":
        if channel not in self.columns:
            raise DataError(f"unknown channel {channel!r}; available: {', '.join(self.columns)}")
        j = self.columns.index(channel)
        return Series(
            name=self.name,
            channel=channel,
            values=self.values[:, j].copy(),
            timestamps=self.timestamps,
            interval=self.interval,
            interval_name=self.interval_name,
        )


@dataclass
class Series:
    name: str
    channel: str
    values: np.ndarray
    timestamps: np.ndarray
    interval: float | None = None
    interval_name: str = "index"

    def __len__(self) -> int:
        return len(self.values)


def _parse_time(cell: str) -> tuple[float, bool]:
    try:
        return float(int(cell)), False
    except ValueError:
        pass
    try:
        stamp = datetime.fromisoformat(cell.strip())
    except ValueError:
        raise DataError(f"unparseable timestamp {cell!r}") from None
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp(), True


def load_dataset(path) -> RawDataset:
    """Read a CSV whose first column is a timestamp (ISO-8601 or integer index)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need a timestamp column and at least one channel")
        columns = [c.strip() for c in header[1:]]
        times, rows, is_datetime = [], [], None
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            try:
                t, dt = _parse_time(row[0])
            except DataError as exc:
                raise DataError(f"{path}: row {lineno}: {exc}") from None
            is_datetime = dt if is_datetime is None else is_datetime
            vals = []
            for col, cell in zip(columns, row[1:]):
                if cell.strip() == "":
                    raise DataError(f"{path}: row {lineno}: missing value in column {col!r}")
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {lineno}: non-numeric value {cell!r} in column {col!r}") from None
                if not np.isfinite(v):
                    raise DataError(f"{path}: row {lineno}: non-finite value in column {col!r}")
                vals.append(v)
            if times and t <= times[-1]:
                raise DataError(f"{path}: row {lineno}: timestamps not strictly increasing")
            times.append(t)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    timestamps = np.array(times)
    interval, interval_name = None, "index"
    if len(times) > 1:
        interval = float(np.median(np.diff(timestamps)))
        if is_datetime:
            interval_name = _INTERVAL_NAMES.get(interval, f"{interval:g}s")
    return RawDataset(
        name=path.stem,
        columns=columns,
        timestamps=timestamps,
        values=np.array(rows, dtype=np.float64),
        interval=interval,
        interval_name=interval_name,
    )


def load_series(path, channel: str) -> Series:
    return load_dataset(path).series(channel)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def __post_init__(self):
        if min(self.train, self.val, self.test) <= 0 or abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise DataError(f"split fractions must be positive and sum to 1, got {self}")

    def boundaries(self, T: int) -> tuple[int, int]:
        """End indices (exclusive) of the train and validation segments."""
        train_end = int(round(self.train * T))
        val_end = int(round((self.train + self.val) * T))
        return train_end, val_end


@dataclass(frozen=True)
class Standardizer:
    mean: float
    std: float

    @classmethod
    def fit(cls, train_values) -> "Standardizer":
        train_values = np.asarray(train_values, dtype=np.float64)
        std = float(train_values.std())
        if not std > 0:
            raise DataError("train segment has zero variance; cannot standardise")
        return cls(float(train_values.mean()), std)

    def transform(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def inverse(self, values) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


def standardize(values, train_end: int) -> tuple[np.ndarray, Standardizer]:
    """Standardise the whole series with statistics of values[:train_end] only."""
    values = np.asarray(values, dtype=np.float64)
    scaler = Standardizer.fit(values[:train_end])
    return scaler.transform(values), scaler


_standardize = standardize  # prepare() shadows the name with its flag


@dataclass
class SampleSet:
    """Training samples; row i forecasts values[t[i]] from strictly earlier values."""

    t: np.ndarray
    windows_prev: np.ndarray  # [n, L], ends at t-2: input for the forecast of t-1
    windows_cur: np.ndarray  # [n, L], ends at t-1
    y_prev2: np.ndarray
    y_prev: np.ndarray
    y: np.ndarray
    targets_prev: np.ndarray  # [n, 5] soft targets at t-1
    targets_cur: np.ndarray  # [n, 5] soft targets at t

    def __len__(self) -> int:
        return len(self.t)

    def subset(self, idx) -> "SampleSet":
        return SampleSet(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))


def make_samples(values, L: int, tau: int, start: int | None = None, stop: int | None = None) -> SampleSet:
    """One sample per 0-based target index t in [max(L+1, start), stop).

    Each sample needs two consecutive windows (for the concept differences)
    and y[t-2], so the first usable target is t = L+1.
    """
    values = np.asarray(values, dtype=np.float64)
    T = len(values)
    if T < L + 2:
        raise DataError(f"series of length {T} too short: need at least L+2={L + 2}")
    if L < tau + 1:
        raise DataError(f"L={L} must be at least tau+1={tau + 1}")
    lo = L + 1 if start is None else max(L + 1, start)
    hi = T if stop is None else min(T, stop)
    if hi <= lo:
        raise DataError(f"no forecast targets in [{lo}, {hi})")
    t = np.arange(lo, hi)
    view = np.lib.stride_tricks.sliding_window_view(values, L)
    windows_cur = view[t - L].copy()
    windows_prev = view[t - L - 1].copy()
    return SampleSet(
        t=t,
        windows_prev=windows_prev,
        windows_cur=windows_cur,
        y_prev2=values[t - 2],
        y_prev=values[t - 1],
        y=values[t],
        targets_prev=soft_target_matrix(windows_prev, tau),
        targets_cur=soft_target_matrix(windows_cur, tau),
    )


@dataclass
class PreparedData:
    """A standardised series with its chronological split and sample sets."""

    series: Series
    values: np.ndarray
    scaler: Standardizer
    train_end: int
    val_end: int
    train: SampleSet
    val: SampleSet
    test: SampleSet


def prepare(
    series: Series, L: int, tau: int, split: SplitSpec = SplitSpec(), standardize: bool = True
) -> PreparedData:
    """Split chronologically and build sample sets; with standardize=False the values pass through."""
    train_end, val_end = split.boundaries(len(series))
    if standardize:
        values, scaler = _standardize(series.values, train_end)
    else:
        values, scaler = np.asarray(series.values, dtype=np.float64), Standardizer(0.0, 1.0)
    return PreparedData(
        series=series,
        values=values,
        scaler=scaler,
        train_end=train_end,
        val_end=val_end,
        train=make_samples(values, L, tau, stop=train_end),
        val=make_samples(values, L, tau, start=train_end, stop=val_end),
        test=make_samples(values, L, tau, start=val_end),
    )


# --- synthetic series -----------------------------------------------------------

EULER_BETA = (0.05, 0.02, 0.4, 0.0, 0.1, 0.0)
EULER_GAMMA = 0.3


def euler_drive(n: int, seed: int = 0, level: float = 1.0, scale: float = 0.6) -> np.ndarray:
    """Smooth exogenous concept drive of shape [n, 5] for the ODE generator."""
    rng = np.random.default_rng(seed)
    s = np.arange(n, dtype=np.float64)[:, None]
    periods = np.array([800.0, 148.0, 212.0, 116.0, 284.0])
    phases = rng.uniform(0, 2 * np.pi, size=N_CONCEPTS)
    scales = scale * np.array([0.5, 0.25, 0.15, 0.25, 0.2])
    offsets = np.array([level, 0.0, 0.0, 0.5 * scale, 0.25 * scale])
    return offsets + scales * np.sin(2 * np.pi * s / periods + phases)


def synthetic_euler_series(
    n: int = 2000, seed: int = 0, beta=EULER_BETA, gamma_: float = EULER_GAMMA, level: float = 1.0, scale: float = 0.6
) -> Series:
    """Series generated by unit-step integration of the driven-damped ODE."""
    drive = euler_drive(n + 1, seed, level, scale)
    y = euler_ode_series(n, beta, gamma_, drive, y0=drive[0, 0])
    return Series("euler_ode", "y", y, np.arange(n, dtype=np.float64))


def synthetic_seasonal_series(n: int = 1000, period: int = 52, noise: float = 0.3, seed: int = 0) -> Series:
    """Weekly-style seasonal series with Gaussian noise (ILI-like surrogate)."""
    rng = np.random.default_rng(seed)
    s = np.arange(n, dtype=np.float64)
    seasonal = 2.0 * np.exp(2.0 * np.cos(2 * np.pi * s / period)) / np.exp(2.0)
    y = 1.0 + seasonal + noise * rng.standard_normal(n)
    return Series("ili_surrogate", "ILI", y, s, interval=7 * 86400.0, interval_name="weekly")

