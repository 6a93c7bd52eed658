"""Shared agent plumbing: vectorized env wrapper, bandit test env, schedules, stats log."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class TwoArmedBandit:
    """One-step episodes with a constant observation; arm ``best`` pays 1, the other 0."""

    n_actions = 2
    obs_dim = 1
    forecast_shape = None

    def __init__(self, best: int = 0):
        self.best = best
        self.episodes = [range(0, 1)]

    def reset(self, start=None, episode=None):
        return np.ones(1)

    def step(self, action):
        reward = 1.0 if int(action) == self.best else 0.0
        return np.ones(1), reward, True, {}


class VecEnv:
    """Steps ``len(envs)`` environments in lock-step; finished ones restart on a random episode."""

    def __init__(self, envs, rng):
        self.envs = list(envs)
        self.rng = rng
        self.n = len(self.envs)
        self._returns = np.zeros(self.n)
        self.finished = []  # episode returns completed since the last drain

    def _reset_one(self, env):
        return env.reset(episode=int(self.rng.integers(len(env.episodes))))

    def reset(self):
        self._returns[:] = 0.0
        return np.stack([self._reset_one(e) for e in self.envs])

    def step(self, actions):
        obs, rewards, dones, infos = [], np.empty(self.n), np.zeros(self.n, dtype=bool), []
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            o, r, d, info = env.step(int(a))
            self._returns[i] += r
            if d:
                self.finished.append(float(self._returns[i]))
                self._returns[i] = 0.0
                o = self._reset_one(env)
            obs.append(o)
            rewards[i], dones[i] = r, d
            infos.append(info)
        return np.stack(obs), rewards, dones, infos

    def drain(self):
        out, self.finished = self.finished, []
        return out


def linear_schedule(start: float, end: float, duration: int, t: int) -> float:
    if duration <= 0:
        return end
    frac = min(1.0, t / duration)
    return start + frac * (end - start)


@dataclass
class Trajectory:
    """Rollout arrays of shape (T, N) (observations (T, N, D))."""

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray

    def __post_init__(self):
        shape = self.actions.shape
        for name in ("log_probs", "values", "rewards", "dones"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} shape {getattr(self, name).shape} != actions shape {shape}")
        if self.obs.shape[:2] != shape:
            raise ValueError("observation leading dims must match actions")


def _clean(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


class StatsLog:
    """Newline-delimited JSON records; no timestamps, so identical runs give identical bytes."""

    def __init__(self, path=None):
        self.path = path
        self.records = []
        if path is not None:
            open(path, "w").close()

    def write(self, **record):
        rec = {k: _clean(v) for k, v in record.items()}
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=False) + "\n")


def greedy_action(logits) -> np.ndarray:
    return np.argmax(np.atleast_2d(logits), axis=1)
