"""Water-heater ON/OFF MDP with daily run-time accounting."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .data import HOURS_PER_YEAR, TimeSeriesYear, TimeStepRecord
from .errors import ConfigError
from .forecast import MODE_CHANNELS, ForecastBlock, Normalizer, planning_scalars


class HeaterAction(IntEnum):
    OFF = 0
    ON = 1


@dataclass(frozen=True)
class HeaterParams:
    device_kw: float = 6.0
    daily_runtime_h: int = 3
    alpha_weight: float = 0.5
    beta_weight: float = 0.5
    task_alpha: float = 10.0
    daily_penalty_mag: float = 10.0
    desired_windows: tuple = ((4, 10),)
    clamp_export: bool = False

    def __post_init__(self):
        if abs(self.alpha_weight + self.beta_weight - 1.0) > 1e-12:
            raise ConfigError("alpha_weight + beta_weight must equal 1")
        if not 1 <= self.daily_runtime_h <= 24:
            raise ConfigError("daily_runtime_h must lie in [1, 24]")
        if self.device_kw <= 0:
            raise ConfigError("device_kw must be positive")
        for lo, hi in self.desired_windows:
            if not 0 <= lo < hi <= 24:
                raise ConfigError(f"bad desired window ({lo}, {hi})")

    def in_window(self, hour: int) -> bool:
        return any(lo <= hour < hi for lo, hi in self.desired_windows)


@dataclass(frozen=True)
class HeaterState:
    hour: int
    price: float
    p_pv: float
    p_background: float
    p_net: float
    p_device: float
    run_time: int


@dataclass(frozen=True)
class DayLedger:
    day_index: int
    on_hours_taken: int
    run_time_end_of_day: int
    met: bool


def cost_reward(state: HeaterState, action: HeaterAction, params: HeaterParams) -> float:
    if action == HeaterAction.ON:
        grid = (state.p_background + params.device_kw) - state.p_pv
    else:
        grid = state.p_background - state.p_pv
    if params.clamp_export:
        grid = max(0.0, grid)
    return -(state.price * grid)


def task_reward(run_time_after: int, action: HeaterAction, at_day_boundary: bool, params: HeaterParams) -> float:
    """Task term given the post-action remaining run-time; the day-end bonus/penalty applies at the boundary."""
    penalty = 0.0
    if at_day_boundary:
        penalty = params.daily_penalty_mag if run_time_after == 0 else -params.daily_penalty_mag
    if action == HeaterAction.ON:
        return -(1 + run_time_after) + penalty
    return (1 - run_time_after - params.task_alpha) + penalty


def combined_reward(cost: float, task: float, params: HeaterParams) -> float:
    return params.alpha_weight * cost + params.beta_weight * task


def heater_step(state: HeaterState, action: HeaterAction, next_record: TimeStepRecord, params: HeaterParams):
    """Advance one hour. Returns ``(next_state, reward, grid_import_kwh, ledger_or_None)``.

    ``next_record`` is the data of the following hour.  The hour-23 step
    closes the day: a :class:`DayLedger` is emitted and run-time resets.
    """
    action = HeaterAction(action)
    on = action == HeaterAction.ON
    run_time_after = state.run_time - 1 if on else state.run_time
    boundary = state.hour == 23
    reward = combined_reward(cost_reward(state, action, params),
                             task_reward(run_time_after, action, boundary, params), params)
    device = params.device_kw if on else 0.0
    imported = max(0.0, (state.p_background + device) - state.p_pv)

    ledger = None
    next_run_time = run_time_after
    if boundary:
        ledger = DayLedger(day_index=(next_record.index - 1) // 24 % 365,
                           on_hours_taken=params.daily_runtime_h - run_time_after,
                           run_time_end_of_day=run_time_after,
                           met=run_time_after == 0)
        next_run_time = params.daily_runtime_h
    nxt = HeaterState(hour=next_record.hour, price=next_record.price, p_pv=next_record.pv_kw,
                      p_background=next_record.load_kw, p_net=next_record.load_kw + device,
                      p_device=device, run_time=next_run_time)
    return nxt, reward, imported, ledger


BASE_OBS_DIM = 8
PLANNING_DIM = 2


def fit_heater_normalizer(year: TimeSeriesYear, split) -> Normalizer:
    return Normalizer.fit({"price": year.price, "pv": year.pv, "load": year.load}, split)


@dataclass(frozen=True)
class ForecastFeatures:
    """Forecast-aware extras for one observation."""

    h_left: int
    slack: float
    block: ForecastBlock


def observe_heater(state: HeaterState, norm: Normalizer, params: HeaterParams,
                   fa: ForecastFeatures | None = None, mode: str | None = None) -> np.ndarray:
    """Flat observation vector.

    Base features: hour sin/cos, z-scored price / PV / background / net (net
    uses the background statistics), device on-fraction and remaining
    run-time fraction.  With ``fa`` the vector continues with ``h_left / 24``,
    ``slack / 24`` and the flattened forecast block.
    """
    angle = 2.0 * np.pi * state.hour / 24.0
    base = [
        np.sin(angle),
        np.cos(angle),
        norm.transform("price", state.price),
        norm.transform("pv", state.p_pv),
        norm.transform("load", state.p_background),
        norm.transform("load", state.p_net),
        state.p_device / params.device_kw,
        state.run_time / params.daily_runtime_h,
    ]
    obs = np.array(base, dtype=np.float64)
    if fa is None:
        return obs
    mode = mode or fa.block.mode
    if fa.block.values.shape[1:] != (MODE_CHANNELS.get(mode, -1),) or fa.block.mode != mode:
        raise ConfigError(f"forecast block shape {fa.block.values.shape} does not match mode {mode!r}")
    return np.concatenate([obs, [fa.h_left / 24.0, fa.slack / 24.0], fa.block.flat()])


class HeaterEnv:
    """Water heater over day-long episodes (each range must start at hour 0).

    With ``blocks`` (precomputed ``(8760, 24, C)`` forecast blocks) the
    observation is forecast-aware; otherwise only base features are returned.
    """

    n_actions = 2

    def __init__(self, year: TimeSeriesYear, episodes, params: HeaterParams | None = None,
                 norm: Normalizer | None = None, blocks: np.ndarray | None = None, mode: str | None = None):
        self.year = year
        self.episodes = list(episodes)
        if not self.episodes:
            raise ConfigError("heater env needs at least one episode range")
        self.params = params or HeaterParams()
        self.norm = norm
        self.blocks = blocks
        self.mode = mode
        if blocks is not None and blocks.shape[1:] != (24, MODE_CHANNELS[mode]):
            raise ConfigError(f"blocks shape {blocks.shape} does not match mode {mode!r}")
        self._next_episode = 0
        self.state = None
        self.t = None
        self.end = None

    @property
    def obs_dim(self) -> int:
        if self.blocks is None:
            return BASE_OBS_DIM
        return BASE_OBS_DIM + PLANNING_DIM + 24 * MODE_CHANNELS[self.mode]

    @property
    def forecast_shape(self):
        """(base width, horizon, channels) of the observation layout, or None."""
        if self.blocks is None:
            return None
        return BASE_OBS_DIM + PLANNING_DIM, 24, MODE_CHANNELS[self.mode]

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
        self.state = HeaterState(rec.hour, rec.price, rec.pv_kw, rec.load_kw, rec.load_kw, 0.0,
                                 self.params.daily_runtime_h)
        return self.observe()

    def observe(self) -> np.ndarray:
        fa = None
        if self.blocks is not None:
            h_left, slack = planning_scalars(self.state.hour, self.state.run_time)
            fa = ForecastFeatures(h_left, slack, ForecastBlock(self.mode, self.blocks[self.t % HOURS_PER_YEAR]))
        return observe_heater(self.state, self.norm, self.params, fa, self.mode)

    def step(self, action):
        prev = self.state
        nxt, reward, imported, ledger = heater_step(prev, HeaterAction(int(action)),
                                                    self._record(self.t + 1), self.params)
        info = {"index": self.t, "grid_import": imported, "price": prev.price,
                "run_time": nxt.run_time if ledger is None else ledger.run_time_end_of_day,
                "on": int(action) == HeaterAction.ON, "ledger": ledger}
        self.t += 1
        self.state = nxt
        done = self.t >= self.end
        return self.observe(), reward, done, info
