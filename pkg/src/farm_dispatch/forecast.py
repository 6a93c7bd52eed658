"""Seasonal-naive forecasts with hour-of-day x month residual bands.

The median forecast of hour ``t`` is the value observed 24 hours earlier.  The
10th/90th percentile bands add empirical residual percentiles fitted per
(month, hour) on the training months only.  Forecast blocks are z-scored with
training-month statistics and clipped to +-5 sigma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import HOUR_OF_INDEX, HOURS_PER_YEAR, MONTH_OF_INDEX, SplitSpec
from .errors import ConfigError, HorizonError

HORIZON = 24
SEASON = 24
MIN_BUCKET = 4
CLIP_SIGMA = 5.0
STD_FLOOR = 1e-8

MODE_CHANNELS = {"one": 2, "all": 6}
# column order of a forecast block, per mode
MODE_LAYOUT = {
    "one": ("load_p50", "pv_p50"),
    "all": ("load_p10", "load_p50", "load_p90", "pv_p10", "pv_p50", "pv_p90"),
}


def seasonal_naive_p50(series, t: int) -> float:
    """``series[t - 24]``; the first day (``t < 24``) forecasts itself."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return series[t - SEASON] if t >= SEASON else series[t]


@dataclass(frozen=True)
class Normalizer:
    """Per-channel z-scoring fitted on training months, clipped to +-``clip_sigma``."""

    mean: dict
    std: dict
    clip_sigma: float = CLIP_SIGMA

    @classmethod
    def fit(cls, channels: dict, split: SplitSpec, clip_sigma: float = CLIP_SIGMA) -> "Normalizer":
        idx = split.indices("train")
        if idx.size == 0:
            raise ConfigError("cannot fit a normalizer without training months")
        mean, std = {}, {}
        for name, values in channels.items():
            sample = np.asarray(values, dtype=np.float64)[idx]
            mean[name] = float(sample.mean())
            std[name] = max(float(sample.std()), STD_FLOOR)
        return cls(mean, std, clip_sigma)

    def transform(self, channel: str, value):
        z = (np.asarray(value, dtype=np.float64) - self.mean[channel]) / self.std[channel]
        return np.clip(z, -self.clip_sigma, self.clip_sigma)

    def channels(self) -> list[str]:
        return list(self.mean)


def circular_month_distance(a: int, b: int) -> int:
    d = abs(a - b) % 12
    return min(d, 12 - d)


@dataclass(frozen=True)
class ResidualBandTable:
    """``q10``/``q90`` arrays of shape (12, 24) indexed ``[month - 1, hour]``; NaN rows for unfitted months."""

    q10: np.ndarray
    q90: np.ndarray
    fitted_on: frozenset

    def source_month(self, month: int) -> int:
        """Fitted month whose bands serve ``month``: itself, else the circularly nearest (ties to the lower number)."""
        if month in self.fitted_on:
            return month
        return min(sorted(self.fitted_on), key=lambda m: circular_month_distance(month, m))

    def lookup(self, month: int, hour: int) -> tuple[float, float]:
        m = self.source_month(int(month))
        return float(self.q10[m - 1, hour]), float(self.q90[m - 1, hour])

    def month_map(self) -> np.ndarray:
        """Row index into q10/q90 for every calendar month (length 13, entry 0 unused)."""
        return np.array([0] + [self.source_month(m) - 1 for m in range(1, 13)])


def residuals(series) -> np.ndarray:
    """``y_t - y_{t-24}``; NaN for the first day."""
    y = np.asarray(series, dtype=np.float64)
    r = np.full(y.shape, np.nan)
    r[SEASON:] = y[SEASON:] - y[:-SEASON]
    return r


def fit_bands(series, split: SplitSpec) -> ResidualBandTable:
    """Fit 10th/90th residual percentiles per (month, hour) over the training months.

    Percentiles use linear interpolation between order statistics.  Buckets
    with fewer than 4 residuals fall back to the month's all-hours percentile.
    """
    y = np.asarray(series, dtype=np.float64)
    if y.shape != (HOURS_PER_YEAR,):
        raise ConfigError(f"series must cover the full year ({HOURS_PER_YEAR} hours), got {y.shape}")
    if not split.train_months:
        raise ConfigError("no training months")
    r = residuals(y)
    q10 = np.full((12, 24), np.nan)
    q90 = np.full((12, 24), np.nan)
    for m in sorted(split.train_months):
        in_month = (MONTH_OF_INDEX == m) & ~np.isnan(r)
        month_res = r[in_month]
        if month_res.size == 0:
            raise ConfigError(f"training month {m} has no residuals")
        fallback = np.percentile(month_res, [10, 90])
        hours = HOUR_OF_INDEX[in_month]
        for h in range(24):
            bucket = month_res[hours == h]
            lo, hi = np.percentile(bucket, [10, 90]) if bucket.size >= MIN_BUCKET else fallback
            q10[m - 1, h], q90[m - 1, h] = lo, hi
    return ResidualBandTable(q10, q90, frozenset(split.train_months))


@dataclass(frozen=True)
class ForecastBlock:
    mode: str
    values: np.ndarray  # (horizon, channels), normalized

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def _channels(p50_d, p50_pv, bands_d, bands_pv, month, hour, norm, mode):
    """Assemble normalized channels for given p50 values and target (month, hour); shapes broadcast."""
    if mode == "one":
        cols = [norm.transform("load", p50_d), norm.transform("pv", p50_pv)]
    elif mode == "all":
        rows_d = bands_d.month_map()[month]
        rows_pv = bands_pv.month_map()[month]
        cols = [
            norm.transform("load", p50_d + bands_d.q10[rows_d, hour]),
            norm.transform("load", p50_d),
            norm.transform("load", p50_d + bands_d.q90[rows_d, hour]),
            norm.transform("pv", p50_pv + bands_pv.q10[rows_pv, hour]),
            norm.transform("pv", p50_pv),
            norm.transform("pv", p50_pv + bands_pv.q90[rows_pv, hour]),
        ]
    else:
        raise ConfigError(f"forecast mode must be 'one' or 'all', got {mode!r}")
    return np.stack(cols, axis=-1)


def make_block(demand_series, pv_series, t: int, bands_d: ResidualBandTable, bands_pv: ResidualBandTable,
               norm: Normalizer, mode: str = "all", wrap: bool = False) -> ForecastBlock:
    """Forecast block for leads 1..24 issued at index ``t``.

    Only values at indices <= t are read.  Without ``wrap``, a horizon past
    the end of the series raises :class:`HorizonError`; with ``wrap`` the
    calendar of the target hour cycles to the start of the year.
    """
    n = len(demand_series)
    if not wrap and t + HORIZON > n - 1:
        raise HorizonError(f"t + {HORIZON} = {t + HORIZON} beyond series end {n - 1}")
    p50_d = np.empty(HORIZON)
    p50_pv = np.empty(HORIZON)
    month = np.empty(HORIZON, dtype=np.int64)
    hour = np.empty(HORIZON, dtype=np.int64)
    for k, lead in enumerate(range(1, HORIZON + 1)):
        target = t + lead
        source = target - SEASON if target >= SEASON else min(target, t)
        p50_d[k] = demand_series[source]
        p50_pv[k] = pv_series[source]
        month[k] = MONTH_OF_INDEX[target % HOURS_PER_YEAR]
        hour[k] = HOUR_OF_INDEX[target % HOURS_PER_YEAR]
    return ForecastBlock(mode, _channels(p50_d, p50_pv, bands_d, bands_pv, month, hour, norm, mode))


def precompute_blocks(demand_series, pv_series, bands_d, bands_pv, norm, mode: str = "all") -> np.ndarray:
    """All blocks of the year at once, shape (8760, 24, channels), wrapping past the year end.

    Equivalent to ``make_block(..., t, wrap=True).values`` for every ``t``.
    """
    d = np.asarray(demand_series, dtype=np.float64)
    pv = np.asarray(pv_series, dtype=np.float64)
    t = np.arange(len(d))[:, None]
    target = t + np.arange(1, HORIZON + 1)[None, :]
    source = np.where(target >= SEASON, target - SEASON, np.minimum(target, t))
    month = MONTH_OF_INDEX[target % HOURS_PER_YEAR]
    hour = HOUR_OF_INDEX[target % HOURS_PER_YEAR]
    return _channels(d[source], pv[source], bands_d, bands_pv, month, hour, norm, mode)


def planning_scalars(hour: int, run_time: float) -> tuple[int, float]:
    """Hours left today after the current one, and slack = h_left - run_time (negative means urgent)."""
    if not 0 <= hour < 24:
        raise ValueError(f"hour out of range: {hour}")
    h_left = 23 - hour
    return h_left, h_left - run_time


def write_bands_csv(path, bands_d: ResidualBandTable, bands_pv: ResidualBandTable) -> None:
    lines = ["month,hour,q10_demand,q90_demand,q10_pv,q90_pv"]
    for m in sorted(bands_d.fitted_on):
        for h in range(24):
            lines.append(f"{m},{h},{bands_d.q10[m - 1, h]:.6f},{bands_d.q90[m - 1, h]:.6f},"
                         f"{bands_pv.q10[m - 1, h]:.6f},{bands_pv.q90[m - 1, h]:.6f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_bands_csv(path) -> tuple[ResidualBandTable, ResidualBandTable]:
    arrays = {k: np.full((12, 24), np.nan) for k in ("q10_demand", "q90_demand", "q10_pv", "q90_pv")}
    months = set()
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            row = dict(zip(header, line.strip().split(",")))
            m, h = int(row["month"]), int(row["hour"])
            months.add(m)
            for k in arrays:
                arrays[k][m - 1, h] = float(row[k])
    fitted = frozenset(months)
    return (ResidualBandTable(arrays["q10_demand"], arrays["q90_demand"], fitted),
            ResidualBandTable(arrays["q10_pv"], arrays["q90_pv"], fitted))


def write_normalizer_csv(path, norm: Normalizer) -> None:
    lines = ["channel,mean,std"] + [f"{c},{norm.mean[c]!r},{norm.std[c]!r}" for c in norm.channels()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_normalizer_csv(path) -> Normalizer:
    mean, std = {}, {}
    with open(path) as fh:
        fh.readline()
        for line in fh:
            c, mu, sd = line.strip().split(",")
            mean[c], std[c] = float(mu), float(sd)
    return Normalizer(mean, std)
