"""Acceptance criteria 1-11, one printed PASS/FAIL line each.

Training criteria use the default synthetic year (data seed 0), seeds 1-5 and
100k environment steps per run.  The whole module takes roughly half an hour
on one core; trained runs are shared through session fixtures.
"""

import itertools
import struct

import numpy as np
import pytest

from farm_dispatch import runner
from farm_dispatch.agents.common import TwoArmedBandit
from farm_dispatch.agents.dqn import DqnConfig, train_dqn
from farm_dispatch.agents.networks import FeedForwardNet, ForecastNet
from farm_dispatch.agents.ppo import PpoConfig, gae_advantages, policy_logit_grads, train_ppo
from farm_dispatch.agents.sac import SacConfig, actor_logit_grads, train_sac
from farm_dispatch.battery import BatteryAction, BatteryParams, BatteryState, battery_reward
from farm_dispatch.cli import main
from farm_dispatch.config import RunConfig
from farm_dispatch.data import HOUR_OF_INDEX, MONTH_OF_INDEX, SplitSpec, SyntheticSpec, generate_synthetic
from farm_dispatch.forecast import fit_bands, precompute_blocks, residuals, seasonal_naive_p50
from farm_dispatch.heater import (
    HeaterAction,
    HeaterParams,
    HeaterState,
    combined_reward,
    cost_reward,
    fit_heater_normalizer,
    task_reward,
)
from farm_dispatch.metrics import satisfaction_rate, total_cost, total_import, wilcoxon_signed_rank
from farm_dispatch.nn import grad_check, log_softmax

pytestmark = pytest.mark.slow

SEEDS = (1, 2, 3, 4, 5)
STEPS = 100_000
DATA_SEED = 0
BANDIT_STEPS = 20_000

# tolerances and thresholds
GRAD_TOL = 1e-4
GRAD_SEEDS = 20
GAE_TOL = 1e-10
GAE_MAX_T = 64
BANDIT_RATE = 0.95
BATTERY_REDUCTION = 0.08
RULE_SLACK = 0.01
PPO_COST_SLACK = 0.005
SATISFACTION = 0.95
KL_BAND = (0.5, 2.0)
KL_IN_BAND = 0.80
BURN_IN = 0.10
FINAL_WINDOW = 0.10
COVERAGE = (0.05, 0.15)
MIN_BUCKET_SAMPLES = 20
NORM_CLIP = 5.0
WILCOXON_N10_P = 0.001953125
REQUIRED_SEEDS = 4


def _bits(x):
    return struct.pack("<d", float(x))


# -- criterion 1 -------------------------------------------------------------

def literal_battery(p_load, p_pv, action, price, soc, rate=5.0, lo=0.15, hi=0.85, pen=15.0):
    penalty = pen if (action == 0 and soc >= hi) or (action == 1 and soc <= lo) else 0.0
    if action == 0:
        return -((p_load + (rate - p_pv)) * price) - penalty
    if action == 1:
        return -(((p_load - p_pv) - rate) * price) - penalty
    return -((p_load - p_pv) * price) - penalty


def literal_cost(price, bg, device, pv, on):
    if on:
        return -(price * ((bg + device) - pv))
    return -(price * (bg - pv))


def literal_task(run_time, on, boundary, alpha=10.0):
    penalty = (10.0 if run_time == 0 else -10.0) if boundary else 0.0
    if on:
        return -(1 + run_time) + penalty
    return (1 - run_time - alpha) + penalty


def test_criterion_01_reward_oracles(criterion):
    rng = np.random.default_rng(1)
    n = 10_000
    bp, hp = BatteryParams(), HeaterParams()
    bad = {"battery": 0, "cost": 0, "task": 0, "combined": 0}
    socs = np.where(rng.random(n) < 0.2, rng.choice([0.15, 0.85, 0.0, 1.0], n), rng.random(n))
    for i in range(n):
        load, pv, price = rng.uniform(0, 60), rng.uniform(0, 25), rng.uniform(0, 1)
        a = int(rng.integers(3))
        got = battery_reward(BatteryState(int(rng.integers(24)), float(socs[i]), load, pv), BatteryAction(a), price, bp)
        bad["battery"] += _bits(got) != _bits(literal_battery(load, pv, a, price, socs[i]))

        hour, on = int(rng.integers(24)), bool(rng.integers(2))
        bg, rt = rng.uniform(0, 60), int(rng.integers(-4, 4))
        s = HeaterState(hour, price, pv, bg, bg, 0.0, rt)
        act = HeaterAction.ON if on else HeaterAction.OFF
        c = cost_reward(s, act, hp)
        bad["cost"] += _bits(c) != _bits(literal_cost(price, bg, 6.0, pv, on))
        boundary = bool(rng.integers(2))
        t = task_reward(rt, act, boundary, hp)
        bad["task"] += _bits(t) != _bits(literal_task(rt, on, boundary))
        r = combined_reward(c, t, hp)
        bad["combined"] += _bits(r) != _bits(0.5 * literal_cost(price, bg, 6.0, pv, on)
                                             + 0.5 * literal_task(rt, on, boundary))
    ok = not any(bad.values())
    criterion(1, ok, f"bitwise mismatches over {n} inputs each: {bad}")
    assert ok


# -- criterion 2 -------------------------------------------------------------

def _agent_losses(net, obs, rng):
    """Loss closures for every head an agent puts on this network."""
    n = len(obs)
    actions = rng.integers(0, 3, n)
    cur = log_softmax(net.forward(obs))[np.arange(n), actions]
    low = rng.random(n) < 0.5
    ratio = np.where(low, rng.uniform(0.5, 0.8, n), rng.uniform(1.2, 1.5, n))
    adv = np.where(low, 1.0, -1.0) * rng.uniform(0.5, 2.0, n)
    old_a, old = cur - np.log(ratio), log_softmax(rng.normal(size=(n, 3)))
    y, qmin = rng.normal(size=n), rng.normal(size=(n, 3))

    def policy():
        loss, d, _ = policy_logit_grads(net.forward(obs), actions, old_a, adv, 0.1, 0.01, c_kl=0.7, old_logp=old)
        net.backward(d)
        return loss

    def value():
        v = net.forward(obs)
        d = np.zeros_like(v)
        d[:, 0] = 0.5 * (v[:, 0] - y) / n
        net.backward(d)
        return 0.25 * float(((v[:, 0] - y) ** 2).mean())

    def critic():
        q = net.forward(obs)
        err = q[np.arange(n), actions] - y
        d = np.zeros_like(q)
        d[np.arange(n), actions] = 2 * err / n
        net.backward(d)
        return float((err ** 2).mean())

    def actor():
        loss, d, _, _ = actor_logit_grads(net.forward(obs), qmin, 0.3)
        net.backward(d)
        return loss

    return {"policy": policy, "value": value, "critic": critic, "actor": actor}


def test_criterion_02_gradient_integrity(criterion):
    worst = {}
    for seed in range(GRAD_SEEDS):
        rng = np.random.default_rng(seed)
        nets = {"mlp": (FeedForwardNet(6, 3, rng, hidden=(8, 8)), rng.normal(size=(5, 6))),
                "gru24": (ForecastNet(5, 24, 2, 3, rng, hidden=(6, 5), gru_hidden=4), rng.normal(size=(5, 5 + 48)))}
        for net_name, (net, obs) in nets.items():
            for loss_name, fn in _agent_losses(net, obs, rng).items():
                key = f"{net_name}/{loss_name}"
                worst[key] = max(worst.get(key, 0.0), grad_check(fn, net.params()))
    top = max(worst.values())
    ok = top < GRAD_TOL
    criterion(2, ok, f"max relative error {top:.2e} over {GRAD_SEEDS} seeds x {len(worst)} net/loss pairs "
                     f"(< {GRAD_TOL:g})")
    assert ok


# -- criterion 3 -------------------------------------------------------------

def brute_force_advantages(r, v, d, gamma, lam, boot):
    T = len(r)
    next_v = np.append(v[1:], boot)
    delta = r + gamma * next_v * (1.0 - d) - v
    out = np.zeros(T)
    for t in range(T):
        w = 1.0
        for k in range(t, T):
            out[t] += w * delta[k]
            if d[k]:
                break
            w *= gamma * lam
    return out


def test_criterion_03_gae_equivalence(criterion):
    rng = np.random.default_rng(3)
    worst = 0.0
    for lam in (0.0, 0.5, 1.0):
        for _ in range(100):
            T = int(rng.integers(1, GAE_MAX_T + 1))
            r, v = rng.normal(size=T), rng.normal(size=T)
            d = (rng.random(T) < 0.1).astype(float)
            boot = rng.normal()
            adv, _ = gae_advantages(r[:, None], v[:, None], d[:, None], 0.99, lam, np.array([boot]))
            worst = max(worst, float(np.max(np.abs(adv[:, 0] - brute_force_advantages(r, v, d, 0.99, lam, boot)))))
    ok = worst < GAE_TOL
    criterion(3, ok, f"max |GAE - brute force| {worst:.2e} (< {GAE_TOL:g}), T <= {GAE_MAX_T}, lambda in {{0, 0.5, 1}}")
    assert ok


# -- criterion 4 -------------------------------------------------------------

def _greedy_rate(agent, episodes=1000):
    obs = np.ones((episodes, 1))
    return float(np.mean(agent.greedy(obs) == 0))


def test_criterion_04_bandit_sanity(criterion):
    rates = {"ppo": [], "dqn": [], "sac": []}
    for seed in SEEDS:
        cfg = PpoConfig(total_steps=BANDIT_STEPS)
        agent, _ = train_ppo([TwoArmedBandit(0) for _ in range(cfg.n_envs)], cfg, seed)
        rates["ppo"].append(_greedy_rate(agent))
        agent, _ = train_dqn(TwoArmedBandit(0), DqnConfig(total_steps=BANDIT_STEPS), seed)
        rates["dqn"].append(_greedy_rate(agent))
        agent, _ = train_sac(TwoArmedBandit(0), SacConfig(total_steps=BANDIT_STEPS), seed)
        rates["sac"].append(_greedy_rate(agent))
    passing = {k: sum(r > BANDIT_RATE for r in v) for k, v in rates.items()}
    ok = all(p == len(SEEDS) for p in passing.values())
    criterion(4, ok, f"seeds with greedy optimal-arm rate > {BANDIT_RATE:.0%} after {BANDIT_STEPS} steps: {passing}")
    assert ok


# -- shared training fixtures ------------------------------------------------

def _train_eval(env, agent, seeds=SEEDS, steps=STEPS):
    cfg = RunConfig(env=env, agent=agent, data_seed=DATA_SEED, seeds=list(seeds), steps=steps)
    ws = runner.Workspace.build(cfg)
    out = {}
    for seed in seeds:
        policy, _, hist = runner.train(cfg, seed, ws)
        out[seed] = (runner.evaluate(policy, ws, agent, seed), hist)
    return ws, out


@pytest.fixture(scope="session")
def battery_runs():
    ws, ppo = _train_eval("battery", "ppo")
    base = runner.evaluate(runner.IdlePolicy(), ws, "none", 0)
    rule = runner.evaluate(runner.RulePolicy(ws), ws, "rule", 0)
    return base, rule, ppo


@pytest.fixture(scope="session")
def heater_runs():
    return {agent: _train_eval("heater", agent)[1] for agent in ("fppo", "ppo", "dqn")}


@pytest.fixture(scope="session")
def pidkl_runs():
    return _train_eval("heater", "pidkl")[1]


# -- criterion 5 -------------------------------------------------------------

def test_criterion_05_battery_claim(criterion, battery_runs):
    base, rule, ppo = battery_runs
    b, r = total_import(base), total_import(rule)
    details, good = [], 0
    for seed, (rep, _) in ppo.items():
        imp = total_import(rep)
        red, vs_rule = (b - imp) / b, (imp - r) / r
        good += red >= BATTERY_REDUCTION and vs_rule <= RULE_SLACK
        details.append(f"s{seed}: reduction {red:+.2%} vs none, {vs_rule:+.2%} vs rule")
    ok = good >= REQUIRED_SEEDS
    criterion(5, ok, f"{good}/5 seeds meet >= {BATTERY_REDUCTION:.0%} reduction and <= {RULE_SLACK:.0%} behind rule "
                     f"(no battery {b:.1f} kWh, rule {r:.1f} kWh; {'; '.join(details)})")
    assert ok


# -- criterion 6 -------------------------------------------------------------

def test_criterion_06_heater_cost_ordering(criterion, heater_runs):
    cost = {a: {s: total_cost(rep) for s, (rep, _) in runs.items()} for a, runs in heater_runs.items()}
    good = sum(cost["fppo"][s] < cost["dqn"][s] and cost["fppo"][s] <= cost["ppo"][s] * (1 + PPO_COST_SLACK)
               for s in SEEDS)
    means = {a: float(np.mean(list(v.values()))) for a, v in cost.items()}
    ok = means["fppo"] < means["dqn"] and good >= REQUIRED_SEEDS
    criterion(6, ok, f"mean cost F-PPO {means['fppo']:.1f}, PPO {means['ppo']:.1f}, DQN {means['dqn']:.1f}; "
                     f"{good}/5 seeds with F-PPO < DQN and F-PPO <= PPO +{PPO_COST_SLACK:.1%}")
    assert ok


# -- criterion 7 -------------------------------------------------------------

def test_criterion_07_satisfaction(criterion, heater_runs):
    sat = {a: {s: satisfaction_rate(rep.ledgers) for s, (rep, _) in heater_runs[a].items()} for a in ("fppo", "dqn")}
    mean_f = float(np.mean(list(sat["fppo"].values())))
    not_worse = all(sat["fppo"][s] >= sat["dqn"][s] for s in SEEDS)
    ok = mean_f >= SATISFACTION and not_worse
    criterion(7, ok, f"F-PPO satisfaction mean {mean_f:.3f} (>= {SATISFACTION}), per seed "
                     f"{[round(v, 3) for v in sat['fppo'].values()]}, DQN {[round(v, 3) for v in sat['dqn'].values()]}")
    assert ok


# -- criterion 8 -------------------------------------------------------------

def _final_reward(hist):
    k = max(1, int(round(FINAL_WINDOW * len(hist))))
    vals = [h["ep_return"] for h in hist[-k:] if h["ep_return"] is not None]
    return float(np.mean(vals))


def test_criterion_08_pid_kl_stability(criterion, pidkl_runs, heater_runs):
    target = RunConfig(env="heater", agent="pidkl").agent_config().pid.target_kl
    lo, hi = KL_BAND[0] * target, KL_BAND[1] * target
    inside = total = 0
    for _, hist in pidkl_runs.values():
        for h in hist[int(BURN_IN * len(hist)):]:
            for kl in h["kl_epochs"]:
                inside += lo <= kl <= hi
                total += 1
    frac = inside / total
    std_pid = float(np.std([_final_reward(h) for _, h in pidkl_runs.values()]))
    std_clip = float(np.std([_final_reward(h) for _, h in heater_runs["fppo"].values()]))
    ok = frac >= KL_IN_BAND and std_pid <= std_clip
    criterion(8, ok, f"{frac:.1%} of post-burn-in epochs with KL in [{lo:g}, {hi:g}] (>= {KL_IN_BAND:.0%}); "
                     f"final-reward std PID-KL {std_pid:.3f} vs F-PPO {std_clip:.3f}")
    assert ok


# -- criterion 9 -------------------------------------------------------------

def test_criterion_09_forecast_calibration(criterion):
    year = generate_synthetic(SyntheticSpec(seed=DATA_SEED))
    split = SplitSpec.heater_default()
    worst_lo, worst_hi, buckets = [], [], 0
    for series in (year.load, year.pv):
        bands = fit_bands(series, split)
        r = residuals(series)
        for m in sorted(split.train_months):
            for h in range(24):
                bucket = r[(MONTH_OF_INDEX == m) & (HOUR_OF_INDEX == h) & ~np.isnan(r)]
                lo, hi = bands.q10[m - 1, h], bands.q90[m - 1, h]
                if len(bucket) < MIN_BUCKET_SAMPLES or lo == hi:
                    continue  # degenerate (zero-width) night-time PV bands
                buckets += 1
                worst_lo.append(float(np.mean(bucket < lo)))
                worst_hi.append(float(np.mean(bucket > hi)))
    coverage_ok = all(COVERAGE[0] <= x <= COVERAGE[1] for x in worst_lo + worst_hi)
    naive_ok = all(seasonal_naive_p50(year.load, t) == year.load[t - 24] for t in range(24, len(year.load)))
    naive_ok &= all(seasonal_naive_p50(year.pv, t) == year.pv[t - 24] for t in range(24, len(year.pv)))
    norm = fit_heater_normalizer(year, split)
    blocks = precompute_blocks(year.load, year.pv, fit_bands(year.load, split), fit_bands(year.pv, split), norm, "all")
    max_abs = float(np.max(np.abs(blocks)))
    ok = coverage_ok and naive_ok and max_abs <= NORM_CLIP
    criterion(9, ok, f"{buckets} buckets, below-q10 mass in [{min(worst_lo):.3f}, {max(worst_lo):.3f}], above-q90 "
                     f"in [{min(worst_hi):.3f}, {max(worst_hi):.3f}]; seasonal-naive identity {naive_ok}; "
                     f"max |normalized| {max_abs:.3f}")
    assert ok


# -- criterion 10 ------------------------------------------------------------

def _enumerated_p(d):
    d = d[d != 0]
    a = np.abs(d)
    srt = np.sort(a)
    ranks = np.array([np.mean(np.nonzero(srt == x)[0] + 1) for x in a])
    obs = ranks[d > 0].sum()
    stats = np.array([ranks[np.array(s, bool)].sum() for s in itertools.product((0, 1), repeat=len(a))])
    tails = min(np.sum(stats >= obs - 1e-9), np.sum(stats <= obs + 1e-9))
    return min(1.0, 2 * tails / 2 ** len(a))


def test_criterion_10_wilcoxon_exactness(criterion):
    _, p10 = wilcoxon_signed_rank(np.arange(1, 11, dtype=float))
    rng = np.random.default_rng(10)
    agree = checked = 0
    while checked < 100:
        d = np.round(rng.normal(0.2, 1.0, int(rng.integers(1, 13))), 1)
        if not np.any(d != 0):
            continue
        checked += 1
        agree += wilcoxon_signed_rank(d)[1] == _enumerated_p(d)
    ok = p10 == WILCOXON_N10_P and agree == checked
    criterion(10, ok, f"n=10 all-positive p = {p10!r} (expected {WILCOXON_N10_P}); "
                      f"{agree}/{checked} random vectors match exhaustive 2^n enumeration")
    assert ok


# -- criterion 11 ------------------------------------------------------------

DETERMINISM_RUNS = [
    ("battery", "ppo", 2048), ("battery", "qtable", 5000), ("battery", "rule", 0), ("heater", "ppo", 2048),
    ("heater", "fppo", 1024), ("heater", "pidkl", 1024), ("heater", "dqn", 3000), ("heater", "sac", 1100),
]


def test_criterion_11_determinism(criterion, tmp_path, monkeypatch):
    monkeypatch.setenv("FARM_DISPATCH_OUT", str(tmp_path))
    identical = []
    for env, agent, steps in DETERMINISM_RUNS:
        args = ["train", "--env", env, "--agent", agent, "--seed", "3", "--data-seed", str(DATA_SEED)]
        if steps:
            args += ["--steps", str(steps)]
        logs = []
        for _ in range(2):
            assert main(args) == 0
            logs.append((tmp_path / env / agent / "3" / "stats.ndjson").read_bytes())
        identical.append(logs[0] == logs[1] and len(logs[0]) > 0)
    ok = all(identical)
    criterion(11, ok, f"{sum(identical)}/{len(identical)} agent/env train commands reproduce a byte-identical stats log")
    assert ok
