"""Evaluation metrics: imports, cost, peak profile, satisfaction, and the Wilcoxon signed-rank test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import HOUR_OF_INDEX, MONTH_OF_INDEX
from .errors import DegenerateError, ValidationError


@dataclass
class RunReport:
    """Hourly evaluation trace of one agent/seed.

    ``index`` holds hour-of-year positions; ``on`` (heater) marks hours with
    the device running.  Monthly aggregates are derived on construction and
    checked against the hourly members.
    """

    agent: str
    seed: int
    env: str
    index: np.ndarray
    grid_import: np.ndarray
    price: np.ndarray
    ledgers: list = field(default_factory=list)
    soc: np.ndarray | None = None
    on: np.ndarray | None = None
    monthly: dict = field(init=False)

    def __post_init__(self):
        self.index = np.asarray(self.index, dtype=np.int64)
        self.grid_import = np.asarray(self.grid_import, dtype=np.float64)
        self.price = np.asarray(self.price, dtype=np.float64)
        n = len(self.index)
        if self.grid_import.shape != (n,) or self.price.shape != (n,):
            raise ValidationError("hourly arrays must share one length")
        if np.any(self.grid_import < 0):
            raise ValidationError("grid imports are never negative")
        self.monthly = {}
        months = MONTH_OF_INDEX[self.index % len(MONTH_OF_INDEX)]
        for m in np.unique(months):
            sel = months == m
            self.monthly[int(m)] = {"import_kwh": float(self.grid_import[sel].sum()),
                                    "cost": float(self.cost[sel].sum())}
        if not math.isclose(sum(v["import_kwh"] for v in self.monthly.values()), float(self.grid_import.sum()),
                            rel_tol=1e-9, abs_tol=1e-9):
            raise ValidationError("monthly imports do not add up to the hourly total")

    @property
    def cost(self) -> np.ndarray:
        return self.price * self.grid_import

    @property
    def months(self) -> np.ndarray:
        return MONTH_OF_INDEX[self.index]

    def subset(self, month: int) -> "RunReport":
        sel = self.months == month
        ledgers = [lg for lg in self.ledgers if MONTH_OF_INDEX[(lg.day_index * 24) % len(MONTH_OF_INDEX)] == month]
        return RunReport(self.agent, self.seed, self.env, self.index[sel], self.grid_import[sel], self.price[sel],
                         ledgers, None if self.soc is None else self.soc[sel],
                         None if self.on is None else self.on[sel])


@dataclass(frozen=True)
class PeakProfile:
    values: tuple

    def __post_init__(self):
        if len(self.values) != 24:
            raise ValidationError("a peak profile has 24 hourly values")
        if any(v < 0 for v in self.values):
            raise ValidationError("peak profile values must be non-negative")

    @property
    def peak(self) -> float:
        return max(self.values)


def total_cost(report: RunReport) -> float:
    return float(report.cost.sum())


def total_import(report: RunReport) -> float:
    return float(report.grid_import.sum())


def peak_profile(report: RunReport) -> PeakProfile:
    """Mean grid draw per hour-of-day over the report's hours."""
    hours = HOUR_OF_INDEX[report.index]
    vals = []
    for h in range(24):
        sel = hours == h
        vals.append(float(report.grid_import[sel].mean()) if sel.any() else 0.0)
    return PeakProfile(tuple(vals))


def peak_reduction(base: PeakProfile, scheduled: PeakProfile) -> float:
    if base.peak == 0:
        raise DegenerateError("base profile has zero peak")
    return (base.peak - scheduled.peak) / base.peak


def satisfaction_rate(ledgers) -> float:
    if not ledgers:
        raise DegenerateError("no days to score")
    return sum(1 for lg in ledgers if lg.met) / len(ledgers)


def window_adherence(report: RunReport, params) -> float | None:
    """Fraction of ON hours falling inside the desired windows (None when the device never ran)."""
    if report.on is None or not report.on.any():
        return None
    hours = HOUR_OF_INDEX[report.index[report.on.astype(bool)]]
    return float(np.mean([params.in_window(int(h)) for h in hours]))


# -- Wilcoxon signed-rank ---------------------------------------------------

EXACT_MAX_N = 25


def _ranks(values):
    """1-based ranks with ties given their average rank."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_null_counts(doubled_ranks):
    """Number of sign assignments giving each value of 2*W+ (a subset-sum count over the doubled ranks)."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in doubled_ranks:
        counts[r:] = counts[r:] + counts[:len(counts) - r]
    return counts


def wilcoxon_signed_rank(diffs):
    """Returns ``(W+, two-sided p)``. Exact for n <= 25 (after dropping zeros), normal approximation above."""
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise DegenerateError("all paired differences are zero")
    ranks = _ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        doubled = [int(round(2 * r)) for r in ranks]
        counts = _exact_null_counts(doubled)
        w2 = int(round(2 * w_plus))
        total = 2 ** n
        upper = sum(counts[w2:])
        lower = sum(counts[:w2 + 1])
        p = min(1.0, 2.0 * min(upper, lower) / total)
        return w_plus, float(p)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_counts ** 3) - tie_counts).sum()) / 48.0
    z = max(0.0, abs(w_plus - mean) - 0.5) / math.sqrt(var)
    return w_plus, min(1.0, math.erfc(z / math.sqrt(2.0)))


# -- CSV output -------------------------------------------------------------

def write_monthly_csv(report: RunReport, path) -> None:
    lines = ["month,import_kwh,cost,peak_kw,satisfaction"]
    for m in sorted(report.monthly):
        sub = report.subset(m)
        sat = f"{satisfaction_rate(sub.ledgers):.6f}" if sub.ledgers else ""
        lines.append(f"{m},{report.monthly[m]['import_kwh']:.6f},{report.monthly[m]['cost']:.6f},"
                     f"{peak_profile(sub).peak:.6f},{sat}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_monthly_csv(path) -> dict:
    rows = {}
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            rec = dict(zip(header, line.rstrip("\n").split(",")))
            rows[int(rec["month"])] = {k: (float(v) if v else None) for k, v in rec.items() if k != "month"}
    return rows


def write_profile_csv(base: PeakProfile, scheduled: PeakProfile, path) -> None:
    lines = ["hour,base_kw,scheduled_kw"]
    lines += [f"{h},{b:.6f},{s:.6f}" for h, (b, s) in enumerate(zip(base.values, scheduled.values))]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_stats_csv(rows, path) -> None:
    """``rows``: dicts with comparison, metric, p_value (float or None), median_improvement, n."""
    lines = ["comparison,metric,p_value,median_improvement,n"]
    for r in rows:
        p = "n/a" if r["p_value"] is None else f"{r['p_value']:.9g}"
        lines.append(f"{r['comparison']},{r['metric']},{p},{r['median_improvement']:.6f},{r['n']}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
