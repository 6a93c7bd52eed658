import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from farm_dispatch.data import SplitSpec, SyntheticSpec, generate_synthetic, slice_episodes
from farm_dispatch.errors import DegenerateError, ValidationError
from farm_dispatch.heater import DayLedger, HeaterEnv, HeaterParams, fit_heater_normalizer
from farm_dispatch.metrics import (
    PeakProfile,
    RunReport,
    peak_profile,
    peak_reduction,
    read_monthly_csv,
    satisfaction_rate,
    total_cost,
    total_import,
    wilcoxon_signed_rank,
    write_monthly_csv,
    write_stats_csv,
)


def _report(imports, prices, start=0):
    n = len(imports)
    return RunReport("x", 0, "battery", np.arange(start, start + n), np.array(imports, float), np.array(prices, float))


def test_total_cost_examples():
    assert total_cost(_report([0.0, 0.0], [0.3, 0.5])) == 0.0
    assert total_cost(_report([2.0, 5.0], [0.3, 0.1])) == pytest.approx(1.10, abs=1e-12)
    with pytest.raises(ValidationError):
        _report([-1.0], [0.2])
    with pytest.raises(ValidationError):
        RunReport("x", 0, "battery", np.arange(3), np.zeros(3), np.zeros(2))


@given(st.lists(st.floats(0, 50), min_size=2, max_size=60), st.integers(1, 59))
def test_total_cost_is_additive(imports, cut):
    cut = min(cut, len(imports) - 1)
    prices = np.linspace(0.1, 0.4, len(imports))
    whole = _report(imports, prices)
    a, b = _report(imports[:cut], prices[:cut]), _report(imports[cut:], prices[cut:], start=cut)
    assert total_cost(whole) == pytest.approx(total_cost(a) + total_cost(b), rel=1e-12, abs=1e-12)


def test_monthly_aggregates_add_up():
    rng = np.random.default_rng(0)
    rep = RunReport("x", 1, "battery", np.arange(8760), rng.uniform(0, 10, 8760), rng.uniform(0.1, 0.3, 8760))
    assert sorted(rep.monthly) == list(range(1, 13))
    assert sum(v["import_kwh"] for v in rep.monthly.values()) == pytest.approx(total_import(rep), rel=1e-12)
    assert rep.monthly[1]["import_kwh"] == pytest.approx(rep.grid_import[:744].sum(), rel=1e-12)


def test_peak_reduction_examples():
    base = PeakProfile(tuple([10.0] * 23 + [30.0]))
    sched = PeakProfile(tuple([10.0] * 23 + [25.875]))
    assert peak_reduction(base, sched) == pytest.approx(0.1375, abs=1e-15)
    assert peak_reduction(base, base) == 0.0
    worse = PeakProfile(tuple([10.0] * 23 + [33.0]))
    assert peak_reduction(base, worse) == pytest.approx(-0.1, abs=1e-15)
    with pytest.raises(DegenerateError):
        peak_reduction(PeakProfile(tuple([0.0] * 24)), sched)
    with pytest.raises(ValidationError):
        PeakProfile(tuple([1.0] * 23))
    with pytest.raises(ValidationError):
        PeakProfile(tuple([1.0] * 23 + [-1.0]))


@given(st.lists(st.floats(0.1, 100), min_size=24, max_size=24), st.lists(st.floats(0, 100), min_size=24, max_size=24),
       st.floats(0.01, 100))
def test_peak_reduction_scale_invariant(b, s, k):
    r = peak_reduction(PeakProfile(tuple(b)), PeakProfile(tuple(s)))
    rk = peak_reduction(PeakProfile(tuple(x * k for x in b)), PeakProfile(tuple(x * k for x in s)))
    assert rk == pytest.approx(r, rel=1e-9, abs=1e-12)


def test_peak_profile_is_hourly_mean():
    imports = np.tile(np.arange(24, dtype=float), 3)
    prof = peak_profile(_report(imports, np.ones(72)))
    assert prof.values == tuple(float(h) for h in range(24))
    assert prof.peak == 23.0


def test_satisfaction_examples():
    days = [DayLedger(i, 3, 0, True) for i in range(99)] + [DayLedger(99, 2, 1, False)]
    assert satisfaction_rate(days) == pytest.approx(0.99, abs=1e-15)
    assert satisfaction_rate(days[:5]) == 1.0
    assert satisfaction_rate([DayLedger(0, 4, -1, False)]) == 0.0
    with pytest.raises(DegenerateError):
        satisfaction_rate([])


def test_forced_on_schedule_satisfies_every_day():
    year = generate_synthetic(SyntheticSpec(seed=0))
    params = HeaterParams()
    eps = slice_episodes(year, SplitSpec.heater_default(), "test", 24)
    env = HeaterEnv(year, eps, params, fit_heater_normalizer(year, SplitSpec.heater_default()))
    ledgers = []
    for k in range(len(eps)):
        env.reset(episode=k)
        done = False
        while not done:
            on = 4 <= env.state.hour < 4 + params.daily_runtime_h
            _, _, done, info = env.step(int(on))
            if info["ledger"] is not None:
                ledgers.append(info["ledger"])
    assert len(ledgers) == len(eps)
    assert satisfaction_rate(ledgers) == 1.0


# -- Wilcoxon ----------------------------------------------------------------

def test_wilcoxon_examples():
    w, p = wilcoxon_signed_rank(np.arange(1, 11, dtype=float))
    assert w == 55.0
    assert p == 0.001953125
    assert wilcoxon_signed_rank([1.0, -1.0])[1] == 1.0
    with pytest.raises(DegenerateError):
        wilcoxon_signed_rank([0.0])
    # zeros are dropped before ranking
    assert wilcoxon_signed_rank([0.0, 0.0] + list(range(1, 11)))[1] == 0.001953125


def enumerate_p(diffs):
    """Exhaustive 2^n sign flips of the |d| ranks; two-sided p = 2 * min tail, capped at 1."""
    d = np.asarray(diffs, float)
    d = d[d != 0]
    a = np.abs(d)
    ranks = np.array([np.mean([1 + j for j in range(len(a)) if np.sort(a)[j] == x]) for x in a])
    obs = ranks[d > 0].sum()
    stats = [sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product((0, 1), repeat=len(a))]
    stats = np.array(stats)
    upper = np.sum(stats >= obs - 1e-9)
    lower = np.sum(stats <= obs + 1e-9)
    return obs, min(1.0, 2 * min(upper, lower) / 2 ** len(a))


def test_wilcoxon_matches_exhaustive_enumeration():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(1, 13))
        # rounded values produce ties and zeros
        d = np.round(rng.normal(0.3, 1.0, n), 1)
        if not np.any(d != 0):
            continue
        w, p = wilcoxon_signed_rank(d)
        ow, op = enumerate_p(d)
        assert w == ow
        assert p == op


@settings(max_examples=60)
@given(st.lists(st.floats(-100, 100, allow_nan=False).filter(lambda x: abs(x) > 1e-6), min_size=1, max_size=40))
def test_wilcoxon_properties(d):
    w, p = wilcoxon_signed_rank(d)
    assert 0 < p <= 1
    assert wilcoxon_signed_rank([-x for x in d])[1] == pytest.approx(p, rel=1e-12)


def test_wilcoxon_normal_approximation_branch():
    d = np.arange(1, 31, dtype=float)
    w, p = wilcoxon_signed_rank(d)
    assert w == 465.0
    assert 0 < p < 1e-5


# -- CSV ---------------------------------------------------------------------

def test_monthly_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    idx = np.arange(744, 744 + 24 * 40)
    rep = RunReport("x", 1, "heater", idx, rng.uniform(0, 5, len(idx)), np.full(len(idx), 0.2),
                    [DayLedger(31 + i, 3, 0, i % 4 != 0) for i in range(40)])
    write_monthly_csv(rep, tmp_path / "m.csv")
    rows = read_monthly_csv(tmp_path / "m.csv")
    assert sorted(rows) == [2, 3]
    assert rows[2]["import_kwh"] == pytest.approx(rep.monthly[2]["import_kwh"], abs=1e-6)
    assert rows[2]["satisfaction"] == pytest.approx(satisfaction_rate(rep.subset(2).ledgers), abs=1e-6)


def test_stats_csv_marks_missing_p(tmp_path):
    write_stats_csv([{"comparison": "a vs a", "metric": "cost", "p_value": None, "median_improvement": 0.0, "n": 10},
                     {"comparison": "a vs b", "metric": "cost", "p_value": 0.001953125, "median_improvement": 2.0,
                      "n": 10}], tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "comparison,metric,p_value,median_improvement,n"
    assert lines[1] == "a vs a,cost,n/a,0.000000,10"
    assert lines[2] == "a vs b,cost,0.001953125,2.000000,10"
