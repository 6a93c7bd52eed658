"""Discrete soft actor-critic: twin critics with Polyak targets and automatic entropy tuning."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericsError
from ..nn import Adam, Param, log_softmax
from .common import StatsLog, VecEnv
from .dqn import ReplayBuffer
from .networks import make_net


@dataclass
class SacConfig:
    lr: float = 3e-4
    gamma: float = 0.99
    buffer: int = 4000
    batch: int = 256
    tau: float = 0.005
    target_entropy_scale: float = 0.5
    gru_dropout: float = 0.10
    total_steps: int = 1_000_000
    learning_starts: int = 1000
    update_frequency: int = 1
    initial_alpha: float = 1.0
    log_every: int = 1000

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ConfigError("tau must lie in (0, 1]")
        if self.buffer < self.batch:
            raise ConfigError("replay buffer must hold at least one batch")


def sac_soft_value(probs, q1, q2, alpha):
    """sum_a pi(a) * (min(q1, q2)(a) - alpha * log pi(a)), per row; 0 * log 0 taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    qmin = np.minimum(q1, q2)
    with np.errstate(divide="ignore"):
        logp = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), 0.0)
    return (p * (qmin - alpha * logp)).sum(axis=-1)


def sac_actor_loss(probs, q1, q2, alpha):
    """sum_a pi(a) * (alpha * log pi(a) - min(q1, q2)(a)), per row."""
    return -sac_soft_value(probs, q1, q2, alpha)


def polyak(target_params, online_params, tau):
    for t, p in zip(target_params, online_params):
        t.value[...] = tau * p.value + (1.0 - tau) * t.value


def actor_logit_grads(logits, qmin, alpha):
    """Mean actor loss and its gradient w.r.t. the logits (critics held fixed)."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    n = len(p)
    loss_rows = (p * (alpha * logp - qmin)).sum(axis=1)
    g = alpha * (logp + 1.0) - qmin  # d loss / d p
    dlogits = p * (g - (p * g).sum(axis=1, keepdims=True)) / n
    return float(loss_rows.mean()), dlogits, p, logp


class SacAgent:
    def __init__(self, obs_dim, n_actions, rng, config: SacConfig, forecast_shape=None):
        self.obs_dim, self.n_actions = obs_dim, n_actions
        self.config = config
        drop = config.gru_dropout
        self.actor = make_net(obs_dim, n_actions, rng, forecast_shape, out_gain=0.01, dropout=drop, name="actor")
        self.q1 = make_net(obs_dim, n_actions, rng, forecast_shape, dropout=drop, name="q1")
        self.q2 = make_net(obs_dim, n_actions, rng, forecast_shape, dropout=drop, name="q2")
        self.q1_t = make_net(obs_dim, n_actions, rng, forecast_shape, dropout=drop, name="q1_target")
        self.q2_t = make_net(obs_dim, n_actions, rng, forecast_shape, dropout=drop, name="q2_target")
        polyak(self.q1_t.params(), self.q1.params(), 1.0)
        polyak(self.q2_t.params(), self.q2.params(), 1.0)
        self.log_alpha = Param(np.array([np.log(config.initial_alpha)]), "log_alpha")
        self.target_entropy = config.target_entropy_scale * np.log(n_actions)
        self.actor_opt = Adam(self.actor.params(), config.lr)
        self.critic_opt = Adam(self.q1.params() + self.q2.params(), config.lr)
        self.alpha_opt = Adam([self.log_alpha], config.lr)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.value[0]))

    def act(self, obs, rng):
        p = np.exp(log_softmax(self.actor.forward(np.atleast_2d(obs))))
        u = rng.random(len(p))
        return np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), self.n_actions - 1)

    def greedy(self, obs):
        return np.argmax(self.actor.forward(np.atleast_2d(obs)), axis=1)

    def train_step(self, batch, rng):
        obs, actions, rewards, next_obs, dones = batch
        cfg = self.config
        alpha = self.alpha
        rows = np.arange(len(actions))
        n = len(actions)

        next_p = np.exp(log_softmax(self.actor.forward(next_obs)))
        v_next = sac_soft_value(next_p, self.q1_t.forward(next_obs), self.q2_t.forward(next_obs), alpha)
        y = rewards + cfg.gamma * (1.0 - dones) * v_next

        losses = []
        for net in (self.q1, self.q2):
            q = net.forward(obs, True, rng)
            err = q[rows, actions] - y
            losses.append(float((err ** 2).mean()))
            dq = np.zeros_like(q)
            dq[rows, actions] = 2.0 * err / n
            net.backward(dq)
        self.critic_opt.step()

        qmin = np.minimum(self.q1.forward(obs), self.q2.forward(obs))
        actor_loss, dlogits, p, logp = actor_logit_grads(self.actor.forward(obs, True, rng), qmin, alpha)
        self.actor.backward(dlogits)
        self.actor_opt.step()

        ent = -(p * logp).sum(axis=1)
        # d/d log_alpha of mean(-alpha * (sum_a p log p + H_target)) = alpha * (H - H_target)
        self.log_alpha.grad[0] = alpha * float((ent - self.target_entropy).mean())
        self.alpha_opt.step()

        polyak(self.q1_t.params(), self.q1.params(), cfg.tau)
        polyak(self.q2_t.params(), self.q2.params(), cfg.tau)
        if not all(np.isfinite(losses)) or not np.isfinite(actor_loss):
            raise NumericsError("non-finite SAC loss")
        return {"q_loss": 0.5 * sum(losses), "actor_loss": actor_loss, "entropy": float(ent.mean()),
                "alpha": self.alpha}

    def arrays(self):
        out = OrderedDict()
        for prefix, net in (("actor", self.actor), ("q1", self.q1), ("q2", self.q2)):
            for i, p in enumerate(net.params()):
                out[f"{prefix}/{i}:{p.name}"] = p.value
        out["log_alpha"] = self.log_alpha.value
        return out

    def load_arrays(self, arrays):
        mine = self.arrays()
        if list(mine) != list(arrays):
            raise ConfigError("checkpoint parameter layout does not match this agent")
        for k, v in arrays.items():
            mine[k][...] = v
        polyak(self.q1_t.params(), self.q1.params(), 1.0)
        polyak(self.q2_t.params(), self.q2.params(), 1.0)


def train_sac(env, config: SacConfig, seed: int, log: StatsLog | None = None):
    init_ss, run_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(run_ss)
    agent = SacAgent(env.obs_dim, env.n_actions, np.random.default_rng(init_ss), config,
                     forecast_shape=getattr(env, "forecast_shape", None))
    buf = ReplayBuffer(config.buffer, env.obs_dim)
    venv = VecEnv([env], rng)
    obs = venv.reset()[0]
    history, recent = [], []
    for step in range(config.total_steps):
        if step < config.learning_starts:
            action = int(rng.integers(env.n_actions))
        else:
            action = int(agent.act(obs, rng)[0])
        next_obs, r, d, _ = venv.step([action])
        buf.add(obs, action, r[0], next_obs[0], d[0])
        obs = next_obs[0]
        if step >= config.learning_starts and step % config.update_frequency == 0:
            recent.append(agent.train_step(buf.sample(config.batch, rng), rng))
        if (step + 1) % config.log_every == 0:
            finished = venv.drain()
            rec = {"step": step + 1, "alpha": agent.alpha,
                   "entropy": float(np.mean([x["entropy"] for x in recent])) if recent else None,
                   "q_loss": float(np.mean([x["q_loss"] for x in recent])) if recent else None,
                   "ep_return": float(np.mean(finished)) if finished else None}
            recent = []
            history.append(rec)
            if log is not None:
                log.write(**rec)
    return agent, history
