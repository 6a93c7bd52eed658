"""Tabular Q-learning over a discretized battery state, and the rule-based battery baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..battery import BatteryAction, BatteryParams, BatteryState, soc_level


@dataclass
class QTableConfig:
    lr: float = 0.1
    gamma: float = 0.89
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decrement: float = 1e-4  # per step
    total_steps: int = 100_000
    log_every: int = 1000


class QTable:
    """Dict-backed Q-table; lookups of unseen keys return zeros without inserting them."""

    def __init__(self, n_actions):
        self.n_actions = n_actions
        self.table = {}

    def get(self, key):
        q = self.table.get(key)
        return np.zeros(self.n_actions) if q is None else q

    def update(self, key, action, target, lr):
        q = self.table.setdefault(key, np.zeros(self.n_actions))
        q[action] += lr * (target - q[action])

    def greedy(self, key):
        return int(np.argmax(self.get(key)))

    def __len__(self):
        return len(self.table)


@dataclass(frozen=True)
class BatteryBins:
    """Load quartile edges; PV uses bin 0 for no generation and terciles of positive output for bins 1-3."""

    load_edges: tuple
    pv_edges: tuple

    @classmethod
    def fit(cls, year, split):
        idx = split.indices("train")
        load = year.load[idx]
        pv = year.pv[idx]
        pos = pv[pv > 0]
        pv_edges = tuple(np.percentile(pos, [100 / 3, 200 / 3])) if pos.size else (np.inf, np.inf)
        return cls(tuple(np.percentile(load, [25, 50, 75])), pv_edges)

    def load_bin(self, load):
        return int(np.searchsorted(self.load_edges, load, side="right"))

    def pv_bin(self, pv):
        return 0 if pv <= 0 else 1 + int(np.searchsorted(self.pv_edges, pv, side="right"))


def battery_key(state: BatteryState, bins: BatteryBins):
    return (state.hour, soc_level(state.soc), bins.load_bin(state.p_load), bins.pv_bin(state.p_pv))


def train_qtable(env, key_fn, config: QTableConfig, seed: int, log=None):
    """Q-learning on a single env; ``key_fn(env)`` maps the env's current state to a hashable key."""
    rng = np.random.default_rng(seed)
    q = QTable(env.n_actions)

    def new_episode():
        env.reset(episode=int(rng.integers(len(env.episodes))))
        return key_fn(env)

    key = new_episode()
    eps = config.eps_start
    ep_return, finished, history = 0.0, [], []
    for step in range(config.total_steps):
        if rng.random() < eps:
            action = int(rng.integers(env.n_actions))
        else:
            action = q.greedy(key)
        _, r, done, _ = env.step(action)
        ep_return += r
        next_key = key_fn(env)
        target = r if done else r + config.gamma * q.get(next_key).max()
        q.update(key, action, target, config.lr)
        if done:
            finished.append(ep_return)
            ep_return = 0.0
            next_key = new_episode()
        key = next_key
        eps = max(config.eps_end, eps - config.eps_decrement)
        if (step + 1) % config.log_every == 0:
            rec = {"step": step + 1, "epsilon": eps, "states": len(q),
                   "ep_return": float(np.mean(finished)) if finished else None}
            finished = []
            history.append(rec)
            if log is not None:
                log.write(**rec)
    return q, history


def rule_based_battery(state: BatteryState, params: BatteryParams, tariff) -> BatteryAction:
    """Charge on PV surplus or at the cheapest tariff level, discharge at the dearest level when load exceeds PV."""
    tariff = np.asarray(tariff)
    price = tariff[state.hour]
    if state.soc < params.soc_max and (state.p_pv > state.p_load or price == tariff.min()):
        return BatteryAction.CHARGE
    if price == tariff.max() and state.soc > params.soc_min and state.p_load > state.p_pv:
        return BatteryAction.DISCHARGE
    return BatteryAction.IDLE
