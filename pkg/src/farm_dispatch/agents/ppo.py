"""PPO with separate policy/value networks, optional forecast encoder and PID-controlled KL penalty."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, NumericsError
from ..nn import Adam, clip_grad_norm, log_softmax
from .common import StatsLog, Trajectory, VecEnv, greedy_action
from .networks import make_net


@dataclass(frozen=True)
class PidKlState:
    c_kl: float = 1.0
    target_kl: float = 0.01
    kp: float = 1.0
    ki: float = 0.05
    kd: float = 0.25
    integral: float = 0.0
    prev_error: float = 0.0


def pid_kl_update(state: PidKlState, measured_kl: float) -> PidKlState:
    if measured_kl < 0:
        raise ValueError("measured KL must be non-negative")
    e = measured_kl - state.target_kl
    integral = state.integral + e
    deriv = e - state.prev_error
    c = max(0.0, state.c_kl + state.kp * e + state.ki * integral + state.kd * deriv)
    return replace(state, c_kl=c, integral=integral, prev_error=e)


@dataclass
class PpoConfig:
    lr: float = 2.5e-4
    gamma: float = 0.99
    clip: float = 0.1
    minibatch: int = 128
    total_steps: int = 1_000_000
    n_envs: int = 8
    n_steps: int = 128
    epochs: int = 4
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    grad_clip: float = 0.5
    target_kl: float = 0.015
    anneal_lr: bool = True
    dropout: float = 0.10
    trust: str = "clip"  # or "pid_kl"
    pid: PidKlState = field(default_factory=PidKlState)

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ConfigError("clip must lie in (0, 1)")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.trust not in ("clip", "pid_kl"):
            raise ConfigError(f"unknown trust mode {self.trust!r}")
        if self.rollout_len % self.minibatch:
            raise ConfigError("minibatch must divide n_envs * n_steps")

    @property
    def rollout_len(self) -> int:
        return self.n_envs * self.n_steps

    @classmethod
    def heater(cls, **kw):
        return cls(**kw)

    @classmethod
    def battery(cls, **kw):
        kw = {"lr": 3e-3, "gamma": 0.89, "clip": 0.2, "minibatch": 64, **kw}
        return cls(**kw)


def gae_advantages(rewards, values, dones, gamma, lam, bootstrap_value):
    """Generalized advantage estimation over time axis 0.

    ``dones[t]`` marks that the episode ended with step ``t`` (no bootstrap
    through it).  Returns raw (un-normalized) ``(advantages, returns)``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    notdone = 1.0 - np.asarray(dones, dtype=np.float64)
    adv = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap_value, dtype=np.float64)
    last = np.zeros_like(rewards[0])
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_value * notdone[t] - values[t]
        last = delta + gamma * lam * notdone[t] * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def normalize(adv):
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_clip_loss(ratio, advantage, delta):
    ratio = np.asarray(ratio, dtype=np.float64)
    return -np.minimum(ratio * advantage, np.clip(ratio, 1 - delta, 1 + delta) * advantage)


def categorical_kl(logp_old, logp_new):
    """KL(old || new) per row from log-probabilities."""
    return (np.exp(logp_old) * (logp_old - logp_new)).sum(axis=-1)


def policy_logit_grads(logits, actions, old_logp_a, adv, delta, entropy_coef, c_kl=0.0, old_logp=None):
    """Loss and d loss / d logits for the clipped surrogate, entropy bonus and optional KL penalty (batch mean)."""
    n = len(actions)
    logp = log_softmax(logits)
    p = np.exp(logp)
    rows = np.arange(n)
    ratio = np.exp(logp[rows, actions] - old_logp_a)
    surr = ppo_clip_loss(ratio, adv, delta)
    # gradient flows only where the unclipped term is the minimum
    active = ratio * adv <= np.clip(ratio, 1 - delta, 1 + delta) * adv
    g_logp = np.where(active, -adv * ratio, 0.0) / n
    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    dlogits = g_logp[:, None] * (onehot - p)
    ent = -(p * logp).sum(axis=1)
    dlogits += entropy_coef * p * (logp + ent[:, None]) / n
    loss = surr.mean() - entropy_coef * ent.mean()
    kl = 0.0
    if c_kl and old_logp is not None:
        kl_rows = categorical_kl(old_logp, logp)
        kl = kl_rows.mean()
        loss += c_kl * kl
        dlogits += c_kl * (p - np.exp(old_logp)) / n
    clipfrac = float(np.mean(np.abs(ratio - 1.0) > delta))
    return loss, dlogits, {"surrogate": float(surr.mean()), "entropy": float(ent.mean()), "kl_penalty": float(kl),
                           "clipfrac": clipfrac}


class PpoAgent:
    def __init__(self, obs_dim, n_actions, rng, config: PpoConfig, forecast_shape=None):
        self.obs_dim, self.n_actions = obs_dim, n_actions
        self.config = config
        self.forecast_shape = forecast_shape
        self.policy = make_net(obs_dim, n_actions, rng, forecast_shape, out_gain=0.01, dropout=config.dropout,
                               name="pi")
        self.value = make_net(obs_dim, 1, rng, forecast_shape, out_gain=1.0, dropout=config.dropout, name="v")
        self.opt = Adam(self.params(), lr=config.lr)

    def params(self):
        return self.policy.params() + self.value.params()

    def logits(self, obs, training=False, rng=None):
        return self.policy.forward(np.atleast_2d(obs), training, rng)

    def values(self, obs, training=False, rng=None):
        return self.value.forward(np.atleast_2d(obs), training, rng)[:, 0]

    def act(self, obs, rng):
        logp = log_softmax(self.logits(obs))
        p = np.exp(logp)
        u = rng.random(len(p))
        actions = np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), self.n_actions - 1)
        return actions, logp[np.arange(len(p)), actions], self.values(obs)

    def greedy(self, obs):
        return greedy_action(self.logits(obs))

    def arrays(self):
        out = OrderedDict()
        for prefix, net in (("policy", self.policy), ("value", self.value)):
            for i, p in enumerate(net.params()):
                out[f"{prefix}/{i}:{p.name}"] = p.value
        return out

    def load_arrays(self, arrays):
        mine = self.arrays()
        if list(mine) != list(arrays):
            raise ConfigError("checkpoint parameter layout does not match this agent")
        for k, v in arrays.items():
            if mine[k].shape != v.shape:
                raise ConfigError(f"shape mismatch for {k}: {mine[k].shape} vs {v.shape}")
            mine[k][...] = v


def ppo_update(agent: PpoAgent, traj: Trajectory, bootstrap_value, config: PpoConfig, rng,
               pid: PidKlState | None = None):
    """Run up to ``config.epochs`` minibatch epochs on one rollout.

    Returns ``(stats, pid_state)``.  The measured KL is the exact categorical
    KL(old || new) over the whole rollout in eval mode after each epoch.
    Clip mode stops early when it exceeds 1.5 * target_kl; PID-KL mode adds
    ``c_kl * KL`` to the loss and updates the controller after each epoch.
    """
    T, N = traj.actions.shape
    adv, returns = gae_advantages(traj.rewards, traj.values, traj.dones, config.gamma, config.gae_lambda,
                                  bootstrap_value)
    obs = traj.obs.reshape(T * N, -1)
    actions = traj.actions.reshape(-1).astype(np.int64)
    adv = normalize(adv.reshape(-1))
    returns = returns.reshape(-1)
    old_logp = log_softmax(agent.logits(obs))
    old_logp_a = old_logp[np.arange(len(actions)), actions]
    use_pid = config.trust == "pid_kl"
    if use_pid and pid is None:
        pid = config.pid

    kls, epochs_run = [], 0
    agg = {"pg_loss": 0.0, "v_loss": 0.0, "entropy": 0.0, "clipfrac": 0.0}
    n_mb = 0
    for _ in range(config.epochs):
        perm = rng.permutation(len(actions))
        for start in range(0, len(actions), config.minibatch):
            idx = perm[start:start + config.minibatch]
            mb = len(idx)
            logits = agent.policy.forward(obs[idx], True, rng)
            c_kl = pid.c_kl if use_pid else 0.0
            loss, dlogits, info = policy_logit_grads(logits, actions[idx], old_logp_a[idx], adv[idx], config.clip,
                                                     config.entropy_coef, c_kl, old_logp[idx])
            v = agent.value.forward(obs[idx], True, rng)[:, 0]
            v_err = v - returns[idx]
            v_loss = 0.5 * float((v_err ** 2).mean())
            if not np.isfinite(loss) or not np.isfinite(v_loss):
                raise NumericsError(f"non-finite PPO loss (policy {loss}, value {v_loss})")
            agent.policy.backward(dlogits)
            agent.value.backward((config.value_coef * v_err / mb)[:, None])
            clip_grad_norm(agent.params(), config.grad_clip)
            agent.opt.step()
            agg["pg_loss"] += info["surrogate"]
            agg["v_loss"] += v_loss
            agg["entropy"] += info["entropy"]
            agg["clipfrac"] += info["clipfrac"]
            n_mb += 1
        epochs_run += 1
        kl = float(categorical_kl(old_logp, log_softmax(agent.logits(obs))).mean())
        kls.append(kl)
        if use_pid:
            pid = pid_kl_update(pid, kl)
        elif kl > 1.5 * config.target_kl:
            break
    stats = {k: v / max(n_mb, 1) for k, v in agg.items()}
    stats.update(kl=kls[-1], kl_epochs=kls, epochs=epochs_run, c_kl=pid.c_kl if use_pid else None)
    return stats, pid


def collect_rollout(agent: PpoAgent, venv: VecEnv, obs, n_steps, rng):
    """Returns ``(trajectory, bootstrap_values, next_obs, infos)``; infos is a list (per step) of lists."""
    T, N = n_steps, venv.n
    buf_obs = np.empty((T, N, agent.obs_dim))
    acts = np.empty((T, N), dtype=np.int64)
    logps, vals, rews = np.empty((T, N)), np.empty((T, N)), np.empty((T, N))
    dones = np.empty((T, N), dtype=bool)
    infos = []
    for t in range(T):
        a, lp, v = agent.act(obs, rng)
        buf_obs[t], acts[t], logps[t], vals[t] = obs, a, lp, v
        obs, rews[t], dones[t], info = venv.step(a)
        infos.append(info)
    traj = Trajectory(buf_obs, acts, logps, vals, rews, dones)
    return traj, agent.values(obs), obs, infos


def train_ppo(envs, config: PpoConfig, seed: int, log: StatsLog | None = None, agent: PpoAgent | None = None):
    """Train on ``envs`` (one instance per vector slot). Returns ``(agent, history)``.

    ``history`` holds one stats dict per update.  Everything random (init,
    sampling, episode choice, minibatch order, dropout) derives from ``seed``.
    """
    if len(envs) != config.n_envs:
        raise ConfigError(f"expected {config.n_envs} envs, got {len(envs)}")
    init_ss, run_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(run_ss)
    e0 = envs[0]
    if agent is None:
        agent = PpoAgent(e0.obs_dim, e0.n_actions, np.random.default_rng(init_ss), config,
                         forecast_shape=getattr(e0, "forecast_shape", None))
    venv = VecEnv(envs, rng)
    obs = venv.reset()
    n_updates = max(1, config.total_steps // config.rollout_len)
    pid = config.pid if config.trust == "pid_kl" else None
    history = []
    for u in range(n_updates):
        if config.anneal_lr:
            agent.opt.lr = config.lr * (1.0 - u / n_updates)
        traj, boot, obs, _ = collect_rollout(agent, venv, obs, config.n_steps, rng)
        stats, pid = ppo_update(agent, traj, boot, config, rng, pid)
        finished = venv.drain()
        stats.update(step=(u + 1) * config.rollout_len, lr=agent.opt.lr,
                     ep_return=float(np.mean(finished)) if finished else None, episodes=len(finished))
        history.append(stats)
        if log is not None:
            log.write(step=stats["step"], lr=stats["lr"], pg_loss=stats["pg_loss"], v_loss=stats["v_loss"],
                      entropy=stats["entropy"], kl=stats["kl"], kl_epochs=stats["kl_epochs"],
                      epochs=stats["epochs"], c_kl=stats["c_kl"], clipfrac=stats["clipfrac"],
                      ep_return=stats["ep_return"])
    return agent, history
