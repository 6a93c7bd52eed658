"""Builds environments and agents from a RunConfig, trains, evaluates, and writes run artifacts."""

from __future__ import annotations

import os
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agents.common import StatsLog
from .agents.dqn import DqnAgent, train_dqn
from .agents.ppo import PpoAgent, train_ppo
from .agents.sac import SacAgent, train_sac
from .agents.tabular import BatteryBins, QTable, battery_key, rule_based_battery, train_qtable
from .battery import BatteryAction, BatteryEnv, fit_battery_normalizer
from .config import RunConfig
from .data import SyntheticSpec, TimeSeriesYear, generate_synthetic, load_csv, slice_episodes
from .errors import CheckpointError, ConfigError
from .forecast import fit_bands, precompute_blocks
from .heater import DayLedger, HeaterEnv, fit_heater_normalizer
from .metrics import RunReport
from .nn import config_digest, load_checkpoint, save_checkpoint

EPISODE_LEN = 24
OUT_ENV = "FARM_DISPATCH_OUT"


def output_root(cli_value=None) -> Path:
    """``--out`` wins, then $FARM_DISPATCH_OUT, then ./runs."""
    return Path(cli_value or os.environ.get(OUT_ENV) or "runs")


@dataclass
class Workspace:
    """Data and fitted preprocessing shared by every env of a run."""

    cfg: RunConfig
    year: TimeSeriesYear
    norm: object
    blocks: np.ndarray | None
    bins: BatteryBins | None

    @classmethod
    def build(cls, cfg: RunConfig, year: TimeSeriesYear | None = None) -> "Workspace":
        if year is None:
            year = load_csv(cfg.data) if cfg.data else generate_synthetic(SyntheticSpec(seed=cfg.data_seed))
        split = cfg.split
        blocks = bins = None
        if cfg.env == "battery":
            norm = fit_battery_normalizer(year, split)
            bins = BatteryBins.fit(year, split)
        else:
            norm = fit_heater_normalizer(year, split)
            if cfg.forecast:
                bd, bpv = fit_bands(year.load, split), fit_bands(year.pv, split)
                blocks = precompute_blocks(year.load, year.pv, bd, bpv, norm, cfg.forecast_mode)
        return cls(cfg, year, norm, blocks, bins)

    def episodes(self, role):
        return slice_episodes(self.year, self.cfg.split, role, EPISODE_LEN)

    def make_env(self, role="train"):
        eps = self.episodes(role)
        if self.cfg.env == "battery":
            return BatteryEnv(self.year, eps, self.cfg.battery_params(), self.norm)
        mode = self.cfg.forecast_mode if self.blocks is not None else None
        return HeaterEnv(self.year, eps, self.cfg.heater_params(), self.norm, self.blocks, mode)


class RulePolicy:
    def __init__(self, ws: Workspace):
        self.ws = ws

    def act_env(self, env):
        start = env.t - env.state.hour
        tariff = self.ws.year.price[start:start + 24]
        return int(rule_based_battery(env.state, env.params, tariff))


class TablePolicy:
    def __init__(self, table: QTable, bins: BatteryBins):
        self.table, self.bins = table, bins

    def act_env(self, env):
        return self.table.greedy(battery_key(env.state, self.bins))


class NetPolicy:
    def __init__(self, agent):
        self.agent = agent

    def act_env(self, env):
        return int(self.agent.greedy(env.observe())[0])


class IdlePolicy:
    """No battery / no device: always Idle (battery) or OFF (heater)."""

    def act_env(self, env):
        return int(BatteryAction.IDLE) if isinstance(env, BatteryEnv) else 0


def build_agent(cfg: RunConfig, env, seed: int):
    """Fresh, untrained agent (used to restore checkpoints)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
    acfg = cfg.agent_config()
    shape = getattr(env, "forecast_shape", None)
    if cfg.agent in ("ppo", "fppo", "pidkl"):
        return PpoAgent(env.obs_dim, env.n_actions, rng, acfg, forecast_shape=shape)
    if cfg.agent == "dqn":
        return DqnAgent(env.obs_dim, env.n_actions, rng, acfg, forecast_shape=shape)
    if cfg.agent == "sac":
        return SacAgent(env.obs_dim, env.n_actions, rng, acfg, forecast_shape=shape)
    return None


def train(cfg: RunConfig, seed: int, ws: Workspace | None = None, log_path=None):
    """Train one seed. Returns ``(policy, arrays_for_checkpoint, history)``."""
    ws = ws or Workspace.build(cfg)
    log = StatsLog(log_path)
    acfg = cfg.agent_config()
    if cfg.agent in ("ppo", "fppo", "pidkl"):
        envs = [ws.make_env("train") for _ in range(acfg.n_envs)]
        agent, hist = train_ppo(envs, acfg, seed, log)
        return NetPolicy(agent), agent.arrays(), hist
    if cfg.agent == "dqn":
        agent, hist = train_dqn(ws.make_env("train"), acfg, seed, log)
        return NetPolicy(agent), agent.arrays(), hist
    if cfg.agent == "sac":
        agent, hist = train_sac(ws.make_env("train"), acfg, seed, log)
        return NetPolicy(agent), agent.arrays(), hist
    if cfg.agent == "qtable":
        if ws.bins is None:
            raise ConfigError("the Q-table agent needs the battery env")
        bins = ws.bins
        table, hist = train_qtable(ws.make_env("train"), lambda e: battery_key(e.state, bins), acfg, seed, log)
        return TablePolicy(table, bins), table_arrays(table), hist
    log.write(step=0, note="rule-based policy has no training")
    return RulePolicy(ws), OrderedDict(), log.records


def table_arrays(table: QTable):
    keys = sorted(table.table)
    out = OrderedDict()
    out["keys"] = np.array(keys, dtype=np.float64).reshape(len(keys), -1) if keys else np.zeros((0, 4))
    out["values"] = np.array([table.table[k] for k in keys]).reshape(len(keys), table.n_actions)
    return out


def restore_policy(cfg: RunConfig, arrays, ws: Workspace):
    env = ws.make_env("test")
    if cfg.agent == "rule":
        return RulePolicy(ws)
    if cfg.agent == "qtable":
        table = QTable(env.n_actions)
        for k, v in zip(arrays["keys"], arrays["values"]):
            table.table[tuple(int(x) for x in k)] = v.copy()
        return TablePolicy(table, ws.bins)
    agent = build_agent(cfg, env, 0)
    agent.load_arrays(arrays)
    return NetPolicy(agent)


def evaluate(policy, ws: Workspace, tag: str, seed: int) -> RunReport:
    """Deterministic run over every test-month day, each starting from the env's reset state."""
    env = ws.make_env("test")
    index, imports, prices, ledgers, socs, ons = [], [], [], [], [], []
    for k in range(len(env.episodes)):
        env.reset(episode=k)
        done = False
        while not done:
            action = policy.act_env(env)
            _, _, done, info = env.step(action)
            index.append(info["index"])
            imports.append(info["grid_import"])
            prices.append(info["price"])
            if "soc" in info:
                socs.append(info["soc"])
            if "on" in info:
                ons.append(info["on"])
                if info["ledger"] is not None:
                    ledgers.append(info["ledger"])
    return RunReport(tag, seed, ws.cfg.env, np.array(index), np.array(imports), np.array(prices), ledgers,
                     np.array(socs) if socs else None, np.array(ons, dtype=bool) if ons else None)


def write_hourly_csv(report: RunReport, path) -> None:
    extra = "soc" if report.soc is not None else "on"
    lines = [f"index,grid_import_kwh,price,{extra}"]
    col = report.soc if report.soc is not None else report.on
    for i, g, p, c in zip(report.index, report.grid_import, report.price, col):
        c = f"{c:.6f}" if extra == "soc" else str(int(c))
        lines.append(f"{i},{g:.6f},{p:.6f},{c}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_daily_csv(report: RunReport, path) -> None:
    lines = ["day_index,on_hours,run_time_end,met"]
    lines += [f"{lg.day_index},{lg.on_hours_taken},{lg.run_time_end_of_day},{int(lg.met)}" for lg in report.ledgers]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_daily_csv(path) -> list:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.int64)
    return [DayLedger(int(d), int(o), int(r), bool(m)) for d, o, r, m in rows]


def read_hourly_csv(path, agent="", seed=0, env="") -> RunReport:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path) as fh:
        extra = fh.readline().strip().split(",")[-1]
    soc = data[:, 3] if extra == "soc" else None
    on = data[:, 3].astype(bool) if extra == "on" else None
    daily = Path(path).with_name("daily.csv")
    ledgers = read_daily_csv(daily) if daily.exists() else []
    return RunReport(agent, seed, env, data[:, 0].astype(np.int64), data[:, 1], data[:, 2], ledgers, soc, on)


def run_dir(root, cfg: RunConfig, seed: int) -> Path:
    return Path(root) / cfg.env / cfg.agent / str(seed)


def save_run_checkpoint(path, cfg: RunConfig, arrays) -> None:
    save_checkpoint(path, arrays, config_digest(cfg.canonical_text()))


def load_run_checkpoint(path, cfg: RunConfig):
    try:
        arrays, _ = load_checkpoint(path, config_digest(cfg.canonical_text()))
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    return arrays
