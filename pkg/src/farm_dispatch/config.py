"""Run configuration: INI files with ``[section] key = value`` lines.

Sections: ``[run]`` (env, agent, data, split, seeds, steps), ``[battery]`` and
``[heater]`` (environment parameters), and one section per learner
(``[ppo] [fppo] [pidkl] [dqn] [sac] [qtable]``) overriding its defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .agents.dqn import DqnConfig
from .agents.ppo import PidKlState, PpoConfig
from .agents.sac import SacConfig
from .agents.tabular import QTableConfig
from .battery import BatteryParams
from .data import SplitSpec
from .errors import ConfigError
from .heater import HeaterParams

ENVS = ("battery", "heater")
AGENTS = ("ppo", "fppo", "pidkl", "dqn", "sac", "qtable", "rule")
BATTERY_ONLY = {"rule", "qtable"}
HEATER_ONLY = {"fppo", "pidkl", "sac"}
FORECAST_AGENTS = {"fppo", "pidkl", "sac"}
PID_KEYS = {"c_kl": "c_kl", "pid_target_kl": "target_kl", "kp": "kp", "ki": "ki", "kd": "kd"}


def parse_months(text) -> list[int]:
    if isinstance(text, (list, tuple, set, frozenset)):
        return sorted(int(m) for m in text)
    text = str(text).strip()
    if not text:
        return []
    return [int(t) for t in text.split(",")]


def parse_seeds(text) -> list[int]:
    """``"1,2,5"`` or ``"1..5"`` (inclusive)."""
    text = str(text).strip()
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def parse_windows(text) -> tuple:
    """``"4-10,17-19"`` -> ((4, 10), (17, 19))."""
    out = []
    for part in str(text).split(","):
        lo, hi = part.strip().split("-")
        out.append((int(lo), int(hi)))
    return tuple(out)


def _coerce(value: str, default):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(float(value)) if "e" in value.lower() else int(value)
    if isinstance(default, float):
        return float(value)
    return value.strip()


def _apply(cls, defaults, section: dict, extra_keys=()):
    """Instantiate dataclass ``cls`` from ``defaults`` overridden by string values in ``section``."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kw = dict(defaults)
    for key, raw in section.items():
        if key in extra_keys:
            continue
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        default = kw.get(key, fields[key].default)
        kw[key] = _coerce(raw, default)
    return cls(**kw)


def _ppo_defaults(env):
    base = PpoConfig.battery() if env == "battery" else PpoConfig.heater()
    return {f.name: getattr(base, f.name) for f in dataclasses.fields(PpoConfig) if f.name != "pid"}


@dataclass
class RunConfig:
    env: str = "heater"
    agent: str = "fppo"
    data: str | None = None  # CSV path; synthetic data when None
    data_seed: int = 0
    train_months: list | None = None  # January+July for the heater, January for the battery
    test_months: list | None = None
    seeds: list = field(default_factory=lambda: [1])
    steps: int | None = None
    forecast_mode: str = "all"
    force: bool = False
    sections: dict = field(default_factory=dict)  # raw per-section overrides

    def __post_init__(self):
        if self.env not in ENVS:
            raise ConfigError(f"env must be one of {ENVS}, got {self.env!r}")
        if self.agent not in AGENTS:
            raise ConfigError(f"agent must be one of {AGENTS}, got {self.agent!r}")
        if self.forecast_mode not in ("one", "all"):
            raise ConfigError("forecast_mode must be 'one' or 'all'")
        if not self.force:
            if self.agent in BATTERY_ONLY and self.env != "battery":
                raise ConfigError(f"agent {self.agent!r} only runs on the battery env (use --force to override)")
            if self.agent in HEATER_ONLY and self.env != "heater":
                raise ConfigError(f"agent {self.agent!r} only runs on the heater env (use --force to override)")
        self.split  # validates months

    @property
    def split(self) -> SplitSpec:
        if self.train_months is None:
            train = SplitSpec.heater_default().train_months if self.env == "heater" else \
                SplitSpec.battery_default().train_months
        else:
            train = self.train_months
        return SplitSpec(train, self.test_months)

    @property
    def forecast(self) -> bool:
        return self.env == "heater" and self.agent in FORECAST_AGENTS

    def battery_params(self) -> BatteryParams:
        return _apply(BatteryParams, {}, self.sections.get("battery", {}))

    def heater_params(self) -> HeaterParams:
        sec = dict(self.sections.get("heater", {}))
        defaults = {}
        if "desired_windows" in sec:
            defaults["desired_windows"] = parse_windows(sec.pop("desired_windows"))
        return _apply(HeaterParams, defaults, sec)

    def agent_config(self):
        sec = dict(self.sections.get(self.agent, {}))
        if self.agent in ("ppo", "fppo", "pidkl"):
            defaults = _ppo_defaults(self.env)
            if self.agent == "pidkl":
                defaults["trust"] = "pid_kl"
                pid = {PID_KEYS[k]: float(v) for k, v in sec.items() if k in PID_KEYS}
                defaults["pid"] = dataclasses.replace(PidKlState(), **pid)
            if self.steps is not None:
                defaults["total_steps"] = self.steps
            return _apply(PpoConfig, defaults, sec, extra_keys=PID_KEYS)
        cls = {"dqn": DqnConfig, "sac": SacConfig, "qtable": QTableConfig}.get(self.agent)
        if cls is None:
            return None
        defaults = {}
        if self.steps is not None:
            defaults["total_steps"] = self.steps
        return _apply(cls, defaults, sec)

    def canonical_text(self) -> str:
        """Stable text of everything that shapes the trained model, excluding seeds and step budget."""
        lines = [f"env={self.env}", f"agent={self.agent}", f"data={self.data or f'synthetic:{self.data_seed}'}",
                 f"train_months={sorted(self.split.train_months)}", f"test_months={sorted(self.split.test_months)}",
                 f"forecast_mode={self.forecast_mode if self.forecast else '-'}"]
        env_params = self.battery_params() if self.env == "battery" else self.heater_params()
        lines.append(f"env_params={env_params!r}")
        cfg = self.agent_config()
        if cfg is not None:
            d = dataclasses.asdict(cfg)
            d.pop("total_steps", None)
            lines.append(f"agent_config={sorted(d.items())!r}")
        return "\n".join(lines) + "\n"


RUN_KEYS = {"env", "agent", "data", "data_seed", "train_months", "test_months", "seeds", "steps", "forecast_mode",
            "force"}


def load_run_config(path, **overrides) -> RunConfig:
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    run = dict(parser["run"]) if parser.has_section("run") else {}
    unknown = set(run) - RUN_KEYS
    if unknown:
        raise ConfigError(f"unknown [run] keys: {sorted(unknown)}")
    sections = {s: dict(parser[s]) for s in parser.sections() if s != "run"}
    kw = {"sections": sections}
    if "env" in run:
        kw["env"] = run["env"].strip()
    if "agent" in run:
        kw["agent"] = run["agent"].strip()
    if run.get("data", "").strip():
        kw["data"] = run["data"].strip()
    if "data_seed" in run:
        kw["data_seed"] = int(run["data_seed"])
    if "train_months" in run:
        kw["train_months"] = parse_months(run["train_months"])
    if run.get("test_months", "").strip():
        kw["test_months"] = parse_months(run["test_months"])
    if "seeds" in run:
        kw["seeds"] = parse_seeds(run["seeds"])
    if run.get("steps", "").strip():
        kw["steps"] = int(float(run["steps"]))
    if "forecast_mode" in run:
        kw["forecast_mode"] = run["forecast_mode"].strip()
    if "force" in run:
        kw["force"] = _coerce(run["force"], False)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**kw)
