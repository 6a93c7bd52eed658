"""Hourly load / PV / tariff data for one non-leap year.

Data either comes from a CSV file (``timestamp,load_kw,pv_kw,price``) or from a
seeded synthetic generator that mimics a two-peak dairy farm profile.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import ConfigError, IngestError, ValidationError

HOURS_PER_YEAR = 8760
DAYS_PER_MONTH = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
SYNTHETIC_CALENDAR_YEAR = 2023

CSV_HEADER = ("timestamp", "load_kw", "pv_kw", "price")
_DECIMAL = re.compile(r"^-?\d+(\.\d{1,6})?$")

# first hour-of-year index of each month (1-based month -> index), plus the end
MONTH_START = np.concatenate([[0], np.cumsum(DAYS_PER_MONTH) * 24]).astype(np.int64)
MONTH_OF_INDEX = np.repeat(np.arange(1, 13), np.array(DAYS_PER_MONTH) * 24)
HOUR_OF_INDEX = np.arange(HOURS_PER_YEAR) % 24


def month_of(index: int) -> int:
    """Calendar month (1-12) of an hour-of-year index; wraps past the year end."""
    return int(MONTH_OF_INDEX[index % HOURS_PER_YEAR])


def month_hours(month: int) -> range:
    return range(int(MONTH_START[month - 1]), int(MONTH_START[month]))


@dataclass(frozen=True)
class TimeStepRecord:
    index: int
    hour: int
    month: int
    load_kw: float
    pv_kw: float
    price: float


class TimeSeriesYear:
    """8760 hourly records stored column-wise.

    Columns are exposed as read-only numpy arrays (``load``, ``pv``, ``price``,
    ``hour``, ``month``); ``year[i]`` returns a :class:`TimeStepRecord`.
    """

    def __init__(self, load, pv, price, source: str = "synthetic", calendar_year: int = SYNTHETIC_CALENDAR_YEAR):
        arrays = [np.array(a, dtype=np.float64) for a in (load, pv, price)]
        for name, arr in zip(("load_kw", "pv_kw", "price"), arrays):
            if arr.shape != (HOURS_PER_YEAR,):
                raise ValidationError(f"{name} must have {HOURS_PER_YEAR} values, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contains non-finite values")
            bad = np.flatnonzero(arr < 0)
            if bad.size:
                raise ValidationError(f"negative {name} at index {int(bad[0])}")
            arr.setflags(write=False)
        self.load, self.pv, self.price = arrays
        self.hour = HOUR_OF_INDEX
        self.month = MONTH_OF_INDEX
        self.source = source
        self.calendar_year = calendar_year

    def __len__(self) -> int:
        return HOURS_PER_YEAR

    def __getitem__(self, index: int) -> TimeStepRecord:
        i = int(index)
        if not 0 <= i < HOURS_PER_YEAR:
            raise IndexError(i)
        return TimeStepRecord(i, int(self.hour[i]), int(self.month[i]),
                              float(self.load[i]), float(self.pv[i]), float(self.price[i]))

    @property
    def records(self) -> list[TimeStepRecord]:
        return [self[i] for i in range(HOURS_PER_YEAR)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeriesYear):
            return NotImplemented
        return (np.array_equal(self.load, other.load) and np.array_equal(self.pv, other.pv)
                and np.array_equal(self.price, other.price))

    def __repr__(self) -> str:
        return f"TimeSeriesYear(source={self.source!r}, load_total={self.load.sum():.1f} kWh, pv_total={self.pv.sum():.1f} kWh)"


@dataclass(frozen=True)
class SplitSpec:
    train_months: frozenset
    test_months: frozenset

    def __init__(self, train_months, test_months=None):
        train = frozenset(int(m) for m in train_months)
        test = frozenset(range(1, 13)) - train if test_months is None else frozenset(int(m) for m in test_months)
        if train & test:
            raise ConfigError(f"train and test months overlap: {sorted(train & test)}")
        for m in train | test:
            if not 1 <= m <= 12:
                raise ConfigError(f"invalid month {m}")
        object.__setattr__(self, "train_months", train)
        object.__setattr__(self, "test_months", test)

    @classmethod
    def heater_default(cls) -> "SplitSpec":
        return cls({1, 7})

    @classmethod
    def battery_default(cls) -> "SplitSpec":
        return cls({1})

    def months(self, role: str) -> frozenset:
        if role == "train":
            return self.train_months
        if role == "test":
            return self.test_months
        raise ConfigError(f"role must be 'train' or 'test', got {role!r}")

    def indices(self, role: str) -> np.ndarray:
        return np.flatnonzero(np.isin(MONTH_OF_INDEX, sorted(self.months(role))))


def _check_hour_ranges(ranges, what):
    for lo, hi in ranges:
        if not (0 <= lo < hi <= 24):
            raise ConfigError(f"bad {what} hour range ({lo}, {hi})")


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic farm year. Hour ranges are half-open ``[start, end)``."""

    seed: int = 0
    pv_peak_kw: float = 20.0
    base_load_kw: float = 8.0
    milking_peak_kw: float = 15.0
    milking_hours: tuple = ((6, 8), (17, 19))
    tariff_levels: tuple = (((0, 7), 0.10), ((7, 17), 0.20), ((20, 24), 0.20), ((17, 20), 0.30))
    noise_std: float = 0.05
    # seasonal PV factor = mean + amplitude * cos(2*pi*(day - solstice) / 365)
    pv_season_mean: float = 0.40
    pv_season_amplitude: float = 0.35

    def __post_init__(self):
        for name in ("pv_peak_kw", "base_load_kw", "milking_peak_kw", "noise_std"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.pv_season_amplitude <= self.pv_season_mean:
            raise ConfigError("seasonal PV factor must stay non-negative")
        _check_hour_ranges(self.milking_hours, "milking")
        covered = np.zeros(24, dtype=int)
        for (lo, hi), price in self.tariff_levels:
            _check_hour_ranges([(lo, hi)], "tariff")
            if price < 0:
                raise ConfigError("tariff price must be non-negative")
            covered[lo:hi] += 1
        if not np.all(covered == 1):
            raise ConfigError("tariff levels must cover every hour exactly once")

    def hourly_tariff(self) -> np.ndarray:
        prices = np.zeros(24)
        for (lo, hi), price in self.tariff_levels:
            prices[lo:hi] = price
        return prices


SUMMER_SOLSTICE_DAY = 171  # 0-based day of year (21 June)


def diurnal_shape(hour) -> np.ndarray:
    """Truncated sinusoid peaking at noon: ``max(0, -cos(2*pi*h/24))``; zero from 18:00 to 06:00."""
    return np.maximum(0.0, -np.cos(2.0 * np.pi * np.asarray(hour, dtype=np.float64) / 24.0))


def seasonal_factor(day, spec: SyntheticSpec) -> np.ndarray:
    d = np.asarray(day, dtype=np.float64)
    return spec.pv_season_mean + spec.pv_season_amplitude * np.cos(2.0 * np.pi * (d - SUMMER_SOLSTICE_DAY) / 365.0)


def generate_synthetic(spec: SyntheticSpec | None = None) -> TimeSeriesYear:
    """Deterministic synthetic year for a given spec.

    PV = peak * seasonal(day) * diurnal(hour) * cloud(day), with a daily cloud
    factor ``max(0, 1 + noise_std * N(0, 1))``.  Load = base + milking peaks,
    times ``max(0, 1 + noise_std * N(0, 1))`` per hour.  All values are
    quantized to 4 decimals so CSV round-trips are exact.
    """
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    day = np.arange(HOURS_PER_YEAR) // 24
    hour = HOUR_OF_INDEX

    cloud = np.maximum(0.0, 1.0 + spec.noise_std * rng.standard_normal(365))
    pv = spec.pv_peak_kw * seasonal_factor(day, spec) * diurnal_shape(hour) * cloud[day]

    base = np.full(24, spec.base_load_kw)
    for lo, hi in spec.milking_hours:
        base[lo:hi] += spec.milking_peak_kw
    jitter = np.maximum(0.0, 1.0 + spec.noise_std * rng.standard_normal(HOURS_PER_YEAR))
    load = base[hour] * jitter

    price = spec.hourly_tariff()[hour]
    return TimeSeriesYear(np.round(load, 4), np.round(pv, 4), np.round(price, 4),
                          source=f"synthetic(seed={spec.seed})")


def _parse_decimal(text: str, line: int, column: str) -> float:
    text = text.strip()
    if not _DECIMAL.match(text):
        raise ValidationError(f"line {line}: {column}={text!r} is not a decimal with at most 6 fractional digits")
    value = float(text)
    if value < 0:
        raise ValidationError(f"line {line}: negative {column} ({value})")
    return value


def load_csv(path) -> TimeSeriesYear:
    """Read and validate an hourly year from ``timestamp,load_kw,pv_kw,price`` CSV."""
    path = Path(path)
    load = np.empty(HOURS_PER_YEAR)
    pv = np.empty(HOURS_PER_YEAR)
    price = np.empty(HOURS_PER_YEAR)
    calendar_year = None
    expected = 0
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ValidationError(f"header must be {','.join(CSV_HEADER)}, got {header}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ValidationError(f"line {line}: expected 4 fields, got {len(row)}")
            try:
                ts = datetime.strptime(row[0].strip(), "%Y-%m-%dT%H:%M:%S")
            except ValueError as exc:
                raise ValidationError(f"line {line}: bad timestamp {row[0]!r}") from exc
            if ts.minute or ts.second:
                raise ValidationError(f"line {line}: timestamp {row[0]!r} is not on the hour")
            if ts.month == 2 and ts.day == 29:
                raise ValidationError(f"line {line}: leap-day rows are not supported")
            if calendar_year is None:
                calendar_year = ts.year
            elif ts.year != calendar_year:
                raise IngestError(expected, f"line {line}: timestamp {row[0]!r} leaves calendar year {calendar_year}")
            day_of_year = sum(DAYS_PER_MONTH[: ts.month - 1]) + ts.day - 1
            index = day_of_year * 24 + ts.hour
            if index != expected:
                # smaller index: duplicate/out-of-order row; larger: skipped hours
                raise IngestError(min(index, expected))
            load[index] = _parse_decimal(row[1], line, "load_kw")
            pv[index] = _parse_decimal(row[2], line, "pv_kw")
            price[index] = _parse_decimal(row[3], line, "price")
            expected += 1
    if expected != HOURS_PER_YEAR:
        raise IngestError(expected)
    return TimeSeriesYear(load, pv, price, source=f"csv({path})", calendar_year=calendar_year)


def write_csv(year: TimeSeriesYear, path) -> None:
    """Write a year with exactly 4 fractional digits per value."""
    start = datetime(year.calendar_year, 1, 1)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for i in range(HOURS_PER_YEAR):
            ts = start + timedelta(hours=i)
            writer.writerow([ts.strftime("%Y-%m-%dT%H:00:00"), f"{year.load[i]:.4f}",
                             f"{year.pv[i]:.4f}", f"{year.price[i]:.4f}"])


def slice_episodes(year: TimeSeriesYear, split: SplitSpec, role: str, episode_len: int) -> list[range]:
    """Disjoint, ordered index ranges of ``episode_len`` hours, each inside one month of ``role``.

    A trailing partial window at the end of a month is dropped.
    """
    months = split.months(role)
    if not months:
        raise ConfigError(f"no {role} months configured")
    if episode_len < 1:
        raise ConfigError("episode_len must be positive")
    ranges = []
    for m in sorted(months):
        lo, hi = int(MONTH_START[m - 1]), int(MONTH_START[m])
        for start in range(lo, hi - episode_len + 1, episode_len):
            ranges.append(range(start, start + episode_len))
    return ranges

