"""Battery dispatch MDP: hour/SOC/load/PV state, Charge/Discharge/Idle actions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .data import HOURS_PER_YEAR, TimeSeriesYear, TimeStepRecord
from .errors import ConfigError
from .forecast import Normalizer


class BatteryAction(IntEnum):
    CHARGE = 0
    DISCHARGE = 1
    IDLE = 2


@dataclass(frozen=True)
class BatteryParams:
    capacity_kwh: float = 13.5
    rate_kw: float = 5.0
    soc_min: float = 0.15
    soc_max: float = 0.85
    penalty: float = 15.0
    initial_soc: float = 0.5
    clamp_export: bool = False

    def __post_init__(self):
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ConfigError("need 0 <= soc_min < soc_max <= 1")
        if self.capacity_kwh <= 0 or self.rate_kw <= 0:
            raise ConfigError("capacity and rate must be positive")
        if not 0 <= self.initial_soc <= 1:
            raise ConfigError("initial_soc must be a fraction")


@dataclass(frozen=True)
class BatteryState:
    hour: int
    soc: float
    p_load: float
    p_pv: float


@dataclass(frozen=True)
class BatteryObservation:
    hour: float
    soc_level: int
    soc_cont: float
    p_load: float
    p_pv: float

    def vector(self) -> np.ndarray:
        return np.array([self.hour, self.soc_level / 10.0, self.soc_cont, self.p_load, self.p_pv])


OBS_DIM = 5


def is_penalized(soc: float, action: BatteryAction, params: BatteryParams) -> bool:
    return ((action == BatteryAction.CHARGE and soc >= params.soc_max)
            or (action == BatteryAction.DISCHARGE and soc <= params.soc_min))


def grid_term(p_load: float, p_pv: float, action: BatteryAction, rate: float) -> float:
    """Grid exchange (kWh over one hour) of the matching reward case; negative means export."""
    if action == BatteryAction.CHARGE:
        return p_load + (rate - p_pv)
    if action == BatteryAction.DISCHARGE:
        return (p_load - p_pv) - rate
    return p_load - p_pv


def battery_reward(state: BatteryState, action: BatteryAction, price: float, params: BatteryParams) -> float:
    grid = grid_term(state.p_load, state.p_pv, action, params.rate_kw)
    if params.clamp_export:
        grid = max(0.0, grid)
    reward = -(grid * price)
    if is_penalized(state.soc, action, params):
        reward = reward - params.penalty
    return reward


def next_soc(soc: float, action: BatteryAction, params: BatteryParams) -> float:
    delta = params.rate_kw / params.capacity_kwh
    if action == BatteryAction.CHARGE and soc < params.soc_max:
        soc = min(soc + delta, params.soc_max)
    elif action == BatteryAction.DISCHARGE and soc > params.soc_min:
        soc = max(soc - delta, params.soc_min)
    return min(1.0, max(0.0, soc))


def grid_import(state: BatteryState, action: BatteryAction, params: BatteryParams) -> float:
    """Physical import: a penalized (rejected) action moves no energy, so it imports like Idle."""
    if is_penalized(state.soc, action, params):
        action = BatteryAction.IDLE
    return max(0.0, grid_term(state.p_load, state.p_pv, action, params.rate_kw))


def battery_step(state: BatteryState, action: BatteryAction, price: float,
                 next_record: TimeStepRecord, params: BatteryParams):
    """Advance one hour. Returns ``(next_state, reward, grid_import_kwh)``.

    ``price`` is the tariff of the hour being acted in; ``next_record`` supplies
    the load/PV of the following hour.
    """
    action = BatteryAction(action)
    reward = battery_reward(state, action, price, params)
    imported = grid_import(state, action, params)
    nxt = BatteryState(next_record.hour, next_soc(state.soc, action, params),
                       next_record.load_kw, next_record.pv_kw)
    return nxt, reward, imported


def soc_level(soc: float) -> int:
    # round half away from zero; soc is never negative
    return int(math.floor(soc * 10.0 + 0.5))


def observe_battery(state: BatteryState, norm: Normalizer) -> BatteryObservation:
    return BatteryObservation(
        hour=state.hour / 23.0,
        soc_level=soc_level(state.soc),
        soc_cont=state.soc,
        p_load=float(norm.transform("load", state.p_load)),
        p_pv=float(norm.transform("pv", state.p_pv)),
    )


def fit_battery_normalizer(year: TimeSeriesYear, split) -> Normalizer:
    return Normalizer.fit({"load": year.load, "pv": year.pv}, split)


class BatteryEnv:
    """Single battery, 24-hour episodes cycling over a list of index ranges.

    ``reset()`` starts the next episode in order (wrapping around); pass
    ``episode`` to pick one by position or ``start`` for a specific hour-of-year.
    """

    n_actions = 3
    obs_dim = OBS_DIM

    def __init__(self, year: TimeSeriesYear, episodes, params: BatteryParams | None = None,
                 norm: Normalizer | None = None):
        self.year = year
        self.episodes = list(episodes)
        if not self.episodes:
            raise ConfigError("battery env needs at least one episode range")
        self.params = params or BatteryParams()
        self.norm = norm
        self._next_episode = 0
        self.state = None
        self.t = None
        self.end = None

    def _record(self, i):
        return self.year[min(i, HOURS_PER_YEAR - 1)]

    def reset(self, start: int | None = None, episode: int | None = None):
        if start is None:
            if episode is None:
                episode = self._next_episode
                self._next_episode += 1
            rng_ = self.episodes[episode % len(self.episodes)]
            start, self.end = rng_.start, rng_.stop
        else:
            self.end = start + 24
        self.t = start
        rec = self._record(start)
        self.state = BatteryState(rec.hour, self.params.initial_soc, rec.load_kw, rec.pv_kw)
        return self.observe()

    def observe(self) -> np.ndarray:
        return observe_battery(self.state, self.norm).vector()

    def step(self, action):
        price = float(self.year.price[self.t])
        prev = self.state
        nxt, reward, imported = battery_step(prev, BatteryAction(int(action)), price,
                                             self._record(self.t + 1), self.params)
        info = {"index": self.t, "grid_import": imported, "price": price, "soc": prev.soc,
                "soc_next": nxt.soc, "penalized": is_penalized(prev.soc, BatteryAction(int(action)), self.params)}
        self.t += 1
        self.state = nxt
        done = self.t >= self.end
        return self.observe(), reward, done, info
