"""DQN: epsilon-greedy exploration, uniform replay, hard-synced target network, squared TD error."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericsError
from ..nn import Adam
from .common import StatsLog, VecEnv, linear_schedule
from .networks import make_net


@dataclass
class DqnConfig:
    lr: float = 2.5e-4
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5
    buffer: int = 10_000
    batch: int = 128
    total_steps: int = 1_000_000
    target_sync_steps: int = 500
    train_frequency: int = 10
    learning_starts: int = 1000
    log_every: int = 1000

    def __post_init__(self):
        if self.buffer < self.batch:
            raise ConfigError("replay buffer must hold at least one batch")


def dqn_target(reward, gamma, next_q_values, done):
    """``reward`` if ``done`` else ``reward + gamma * max(next_q_values)`` (vectorized over rows)."""
    next_q = np.asarray(next_q_values, dtype=np.float64)
    best = next_q.max(axis=-1)
    return np.where(done, reward, reward + gamma * best)


class ReplayBuffer:
    def __init__(self, capacity, obs_dim):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.pos = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done):
        i = self.pos
        self.obs[i], self.actions[i], self.rewards[i] = obs, action, reward
        self.next_obs[i], self.dones[i] = next_obs, done
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch, rng):
        idx = rng.integers(0, self.size, batch)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx]


class DqnAgent:
    def __init__(self, obs_dim, n_actions, rng, config: DqnConfig, forecast_shape=None):
        self.obs_dim, self.n_actions = obs_dim, n_actions
        self.config = config
        self.q = make_net(obs_dim, n_actions, rng, forecast_shape, name="q")
        self.target = make_net(obs_dim, n_actions, rng, forecast_shape, name="q_target")
        self.sync()
        self.opt = Adam(self.q.params(), lr=config.lr)

    def sync(self):
        for t, p in zip(self.target.params(), self.q.params()):
            t.value[...] = p.value

    def q_values(self, obs):
        return self.q.forward(np.atleast_2d(obs))

    def greedy(self, obs):
        return np.argmax(self.q_values(obs), axis=1)

    def train_step(self, batch):
        obs, actions, rewards, next_obs, dones = batch
        y = dqn_target(rewards, self.config.gamma, self.target.forward(next_obs), dones)
        q = self.q.forward(obs)
        rows = np.arange(len(actions))
        err = q[rows, actions] - y
        loss = float((err ** 2).mean())
        if not np.isfinite(loss):
            raise NumericsError("non-finite DQN loss")
        dq = np.zeros_like(q)
        dq[rows, actions] = 2.0 * err / len(actions)
        self.q.backward(dq)
        self.opt.step()
        return loss

    def arrays(self):
        return OrderedDict((f"q/{i}:{p.name}", p.value) for i, p in enumerate(self.q.params()))

    def load_arrays(self, arrays):
        mine = self.arrays()
        if list(mine) != list(arrays):
            raise ConfigError("checkpoint parameter layout does not match this agent")
        for k, v in arrays.items():
            mine[k][...] = v
        self.sync()


def epsilon_at(config: DqnConfig, step: int) -> float:
    return linear_schedule(config.eps_start, config.eps_end, int(config.eps_decay_fraction * config.total_steps), step)


def train_dqn(env, config: DqnConfig, seed: int, log: StatsLog | None = None):
    """Single-env DQN training. Returns ``(agent, history)``."""
    init_ss, run_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(run_ss)
    agent = DqnAgent(env.obs_dim, env.n_actions, np.random.default_rng(init_ss), config,
                     forecast_shape=getattr(env, "forecast_shape", None))
    buf = ReplayBuffer(config.buffer, env.obs_dim)
    venv = VecEnv([env], rng)
    obs = venv.reset()[0]
    history, losses = [], []
    for step in range(config.total_steps):
        eps = epsilon_at(config, step)
        if rng.random() < eps:
            action = int(rng.integers(env.n_actions))
        else:
            action = int(agent.greedy(obs)[0])
        next_obs, r, d, infos = venv.step([action])
        # the wrapper already reset a finished env; store the true terminal transition
        buf.add(obs, action, r[0], next_obs[0], d[0])
        obs = next_obs[0]
        if step >= config.learning_starts and step % config.train_frequency == 0:
            losses.append(agent.train_step(buf.sample(config.batch, rng)))
        if step % config.target_sync_steps == 0:
            agent.sync()
        if (step + 1) % config.log_every == 0:
            finished = venv.drain()
            rec = {"step": step + 1, "epsilon": eps, "loss": float(np.mean(losses)) if losses else None,
                   "ep_return": float(np.mean(finished)) if finished else None}
            losses = []
            history.append(rec)
            if log is not None:
                log.write(**rec)
    return agent, history
