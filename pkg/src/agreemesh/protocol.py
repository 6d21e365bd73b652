"""Agreement conditions, the per-day conversation engine and experiment configs."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .core import (ActionMessage, Conversation, Day, NumericMessage, SettingDescriptor,
                   Transcript, clamp_unit, numeric)
from .utility import UtilitySpec, best_response

SETTINGS = ("canonical", "ddim", "action", "nagent")
DEFAULT_MAX_ROUNDS = 10_000


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# -- agreement ----------------------------------------------------------------
#
# Differences within BOUNDARY_TOL of the threshold count as sitting on it, so
# that e.g. |0.5 - 0.4| (0.09999999999999998 in floats) does not pass "< 0.1".

BOUNDARY_TOL = 1e-12


def agree_canonical(p: float, q: float, eps: float) -> bool:
    return abs(p - q) < eps - BOUNDARY_TOL


def agree_ddim(p, q, eps: float) -> bool:
    gap = float(np.max(np.abs(np.asarray(p, float) - np.asarray(q, float))))
    return gap < eps - BOUNDARY_TOL


def agree_action(utility: UtilitySpec, human_action: int, human_pred, model_action: int,
                 model_pred, eps: float) -> bool:
    """Each side finds the other's action within ``eps`` of its own under its own belief."""
    slack = eps + BOUNDARY_TOL
    model_ok = utility.value(human_action, model_pred) >= \
        utility.value(model_action, model_pred) - slack
    human_ok = utility.value(model_action, human_pred) >= \
        utility.value(human_action, human_pred) - slack
    return model_ok and human_ok


def agree_n(reference, others, eps: float) -> bool:
    """Every other agent is within ``eps / 2`` (l-infinity) of the reference."""
    ref = np.asarray(reference, float)
    return all(float(np.max(np.abs(np.asarray(o, float) - ref))) < eps / 2 - BOUNDARY_TOL
               for o in others)


@dataclass(frozen=True)
class AgreementCondition:
    kind: str
    epsilon: float
    utility: UtilitySpec | None = None

    def __post_init__(self):
        if self.kind not in SETTINGS:
            raise ConfigError(f"unknown setting {self.kind!r}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.kind == "action" and self.utility is None:
            raise ConfigError("action agreement needs a utility")

    def check(self, conv: Conversation, k: int, n_agents: int = 2) -> bool:
        """Agreement after the round-``k`` message (``k >= 2``)."""
        if k < 2:
            return False
        if self.kind == "nagent":
            if (k - 1) % n_agents != 0:
                return False
            latest = conv.messages[k - n_agents:k]
            return agree_n(latest[-1].value, [m.value for m in latest[:-1]], self.epsilon)
        a, b = conv.messages[k - 2], conv.messages[k - 1]
        if self.kind == "action":
            # the model speaks on odd rounds
            if k % 2 == 0:
                h, hp, m, mp = b, conv.predictions[k - 1], a, conv.predictions[k - 2]
            else:
                h, hp, m, mp = a, conv.predictions[k - 2], b, conv.predictions[k - 1]
            return agree_action(self.utility, h.action, hp, m.action, mp, self.epsilon)
        if self.kind == "canonical":
            return agree_canonical(a.value[0], b.value[0], self.epsilon)
        return agree_ddim(a.value, b.value, self.epsilon)


# -- one day ------------------------------------------------------------------

@dataclass
class DayResult:
    day: Day
    clamped: int = 0


def run_day(agents, condition: AgreementCondition, t: int, features, outcome,
            max_rounds: int = DEFAULT_MAX_ROUNDS) -> DayResult:
    """Run one conversation and reveal the outcome to every agent.

    ``outcome`` is a vector or a callable ``f(conversation) -> vector``. A
    day that reaches ``max_rounds`` without agreement is flagged with
    ``agreed = False``; its outcome is still revealed.
    """
    n = len(agents)
    for a, feat in zip(agents, features):
        a.begin_day(t, feat)
    conv = Conversation()
    clamped = 0
    agreed = False
    for k in range(1, max_rounds + 1):
        speaker = agents[(k - 1) % n]
        msg, pred = speaker.speak(k, conv)
        pred, moved = clamp_unit(pred)
        if isinstance(msg, NumericMessage):
            vals, moved_msg = clamp_unit(msg.value)
            if moved_msg:
                msg = numeric(vals)
            moved = moved or moved_msg
        clamped += int(moved)
        conv.append(msg, pred)
        if condition.check(conv, k, n):
            agreed = True
            break
    conv.agreed = agreed
    y = outcome(conv) if callable(outcome) else outcome
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    for a in agents:
        a.end_day(y)
    return DayResult(Day(conv, tuple(float(v) for v in y)), clamped)


# -- experiment configs -------------------------------------------------------

CONFIG_FIELDS = {"setting", "epsilon", "days", "max_rounds", "agents", "outcome_source",
                 "seed", "d", "utility"}


@dataclass
class ProtocolConfig:
    setting: str
    epsilon: float
    days: int
    agents: list
    outcome_source: dict
    seed: int = 0
    d: int = 1
    max_rounds: int = DEFAULT_MAX_ROUNDS
    utility: UtilitySpec | None = None
    base_dir: str | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if not isinstance(self.epsilon, (int, float)) or not self.epsilon > 0:
            raise ConfigError("epsilon must be a positive number")
        for name in ("days", "max_rounds", "d", "seed"):
            val = getattr(self, name)
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{name} must be an integer")
        if self.days < 0 or self.max_rounds < 1 or self.d < 1 or self.seed < 0:
            raise ConfigError("max_rounds and d must be positive; days and seed "
                              "non-negative")
        if not isinstance(self.agents, list) or not all(isinstance(a, dict) for a in self.agents):
            raise ConfigError("agents must be a list of objects")
        n = len(self.agents)
        if self.setting == "nagent":
            if n < 2:
                raise ConfigError("nagent setting needs at least two agents")
        elif n != 2:
            raise ConfigError(f"{self.setting} setting needs exactly two agents")
        if self.setting in ("canonical", "nagent") and self.d != 1:
            raise ConfigError(f"{self.setting} setting needs d = 1")
        if self.setting == "action":
            if self.utility is None:
                raise ConfigError("action setting needs a utility")
            if self.utility.d != self.d:
                raise ConfigError("utility matrix width must equal d")
        if not isinstance(self.outcome_source, dict):
            raise ConfigError("outcome_source must be an object")

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str | None = None) -> "ProtocolConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(raw) - CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        missing = {"setting", "epsilon", "days", "agents", "outcome_source"} - set(raw)
        if missing:
            raise ConfigError(f"missing config fields: {sorted(missing)}")
        utility = None
        if raw.get("utility") is not None:
            try:
                utility = UtilitySpec.from_dict(raw["utility"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"bad utility: {exc}") from exc
        return cls(setting=raw["setting"], epsilon=raw["epsilon"], days=raw["days"],
                   agents=raw["agents"], outcome_source=raw["outcome_source"],
                   seed=raw.get("seed", 0), d=raw.get("d", 1),
                   max_rounds=raw.get("max_rounds", DEFAULT_MAX_ROUNDS), utility=utility,
                   base_dir=base_dir)

    @classmethod
    def load(cls, path) -> "ProtocolConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        out = {"setting": self.setting, "epsilon": self.epsilon, "days": self.days,
               "max_rounds": self.max_rounds, "agents": self.agents,
               "outcome_source": self.outcome_source, "seed": self.seed, "d": self.d}
        if self.utility is not None:
            out["utility"] = self.utility.to_dict()
        return out

    def condition(self) -> AgreementCondition:
        return AgreementCondition(self.setting, float(self.epsilon), self.utility)


@dataclass
class Experiment:
    transcript: Transcript
    agents: list
    source: object


def build_experiment(config: ProtocolConfig):
    from .agents import build_agent
    from .sources import make_source

    seeds = np.random.SeedSequence(config.seed).spawn(config.n_agents + 1)
    try:
        source = make_source(config.outcome_source, n_agents=config.n_agents, d=config.d,
                             rng=np.random.default_rng(seeds[0]), base_dir=config.base_dir)
        prior = getattr(source, "prior", None)
        agents = []
        for i, spec in enumerate(config.agents):
            side = "model" if i == 0 else "human"
            agent = build_agent(spec, setting=config.setting, d=config.d, T=config.days,
                                rng=np.random.default_rng(seeds[i + 1]),
                                utility=config.utility, prior=prior, side=side)
            agents.append(agent.bind(i + 1, config.n_agents))
    except (ValueError, KeyError, TypeError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return source, agents


def run_experiment(config: ProtocolConfig, keep_agents: bool = False):
    """Run ``config.days`` days; the result is a pure function of the config.

    Returns the transcript, or an :class:`Experiment` when ``keep_agents``.
    """
    source, agents = build_experiment(config)
    setting = SettingDescriptor(kind=config.setting, d=config.d, n_agents=config.n_agents,
                                utility=config.utility.to_dict() if config.utility else None)
    transcript = Transcript(setting=setting, epsilon=float(config.epsilon))
    cond = config.condition()
    for t in range(1, config.days + 1):
        feats = source.features(t)
        res = run_day(agents, cond, t, feats, lambda conv, t=t: source.outcome(t, conv),
                      config.max_rounds)
        transcript.days.append(res.day)
        transcript.clamped += res.clamped
    if keep_agents:
        return Experiment(transcript, agents, source)
    return transcript


__all__ = [
    "ActionMessage", "AgreementCondition", "ConfigError", "DayResult", "Experiment",
    "ProtocolConfig", "UtilitySpec", "agree_action", "agree_canonical", "agree_ddim",
    "agree_n", "best_response", "build_experiment", "run_day", "run_experiment",
]
