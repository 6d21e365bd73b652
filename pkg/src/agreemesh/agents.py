"""Conversation agents.

Every agent implements ``begin_day(t, feature)``, ``speak(k, conversation)``
returning ``(message, prediction)`` and ``end_day(outcome)``. Deterministic
agents also expose ``message_for(feature, conversation)``, a side-effect
free strategy handle that Bayesian counterparts use to simulate them.
"""
from __future__ import annotations

import json

import numpy as np

from .core import (ActionMessage, Conversation, NumericMessage, buckets_for_width,
                   bucket_indices, clamp_unit, numeric)
from .predictors import (ActionCells, IntervalCells, UnbiasedPredictor,
                         make_scalar_predictor)
from .utility import UtilitySpec, best_response


class InconsistentMessage(ValueError):
    """A message ruled out every world still considered possible."""


# -- base models --------------------------------------------------------------

class BaseModel:
    """Maps an agent's private feature to its initial prediction.

    ``kind`` is ``"identity"`` (the feature already is a prediction vector),
    ``"constant"`` or ``"table"`` (feature string to prediction).
    """

    def __init__(self, kind: str = "identity", d: int = 1, value=None, table=None):
        if kind not in ("identity", "constant", "table"):
            raise ValueError(f"unknown base model {kind!r}")
        self.kind = kind
        self.d = d
        self.value = None if value is None else np.atleast_1d(np.asarray(value, float))
        self.table = {str(k): np.atleast_1d(np.asarray(v, float))
                      for k, v in (table or {}).items()}
        if kind == "constant" and (self.value is None or self.value.size != d):
            raise ValueError("constant base model needs a value of length d")

    @classmethod
    def from_dict(cls, raw: dict, d: int) -> "BaseModel":
        extra = set(raw) - {"kind", "value", "table"}
        if extra:
            raise ValueError(f"unknown base model fields {sorted(extra)}")
        return cls(raw.get("kind", "identity"), d, raw.get("value"), raw.get("table"))

    def __call__(self, feature) -> np.ndarray:
        if self.kind == "constant":
            return self.value.copy()
        if self.kind == "table":
            try:
                return self.table[str(feature)].copy()
            except KeyError:
                raise ValueError(f"base model has no entry for feature {feature!r}") from None
        return np.atleast_1d(np.asarray(feature, dtype=np.float64)).copy()


# -- shared plumbing ----------------------------------------------------------

def latest_by(conversation: Conversation, who: int, n_agents: int, before: int):
    """``(round, message)`` of agent ``who``'s latest message before round ``before``."""
    for r in range(before - 1, 0, -1):
        if (r - 1) % n_agents + 1 == who:
            return r, conversation.messages[r - 1]
    return None, None


class Agent:
    deterministic = True

    def __init__(self):
        self.index = 1
        self.n_agents = 2
        self.feature = None
        self.t = 0

    def bind(self, index: int, n_agents: int) -> "Agent":
        self.index = index
        self.n_agents = n_agents
        return self

    @property
    def counterpart(self) -> int:
        if self.n_agents == 2:
            return 3 - self.index
        return 1

    def begin_day(self, t: int, feature) -> None:
        self.t = t
        self.feature = feature

    def end_day(self, outcome) -> None:
        pass

    def is_first_turn(self, k: int) -> bool:
        return k == self.index

    def message_for(self, feature, conversation: Conversation):
        raise NotImplementedError(f"{type(self).__name__} has no strategy handle")


class ConverseAgent(Agent):
    """Calibrated conversation agent for scalar or vector messages.

    Its first turn passes the base model's prediction through. Later turns
    bucket each coordinate of the counterpart's latest message (width ``g``)
    and ask the scalar predictor instance keyed by (round of that message,
    bucket, coordinate). Instances are created on first use, and every
    instance consulted during a day is updated with the day's outcome.
    """

    def __init__(self, base: BaseModel, g: float, predictor: str = "aost",
                 horizon: int | None = None, d: int = 1):
        super().__init__()
        self.base = base
        self.g = g
        self.n_buckets = buckets_for_width(g)
        self.predictor = predictor
        self.horizon = horizon
        self.d = d
        self.instances: dict = {}
        self.used: list = []

    def _keys(self, k, conversation):
        r, msg = latest_by(conversation, self.counterpart, self.n_agents, k)
        if msg is None or not isinstance(msg, NumericMessage):
            raise ValueError(f"round {k}: no numeric counterpart message to condition on")
        vals = np.clip(msg.as_array(), 0.0, 1.0)
        if vals.size != self.d:
            raise ValueError("counterpart message has the wrong dimension")
        buckets = bucket_indices(vals, self.n_buckets) + 1
        return [(r, int(buckets[j]), j) for j in range(self.d)]

    def _instance(self, key, create):
        inst = self.instances.get(key)
        if inst is None:
            inst = make_scalar_predictor(self.predictor, self.horizon)
            if create:
                self.instances[key] = inst
        return inst

    def message_for(self, feature, conversation: Conversation):
        k = conversation.length + 1
        if self.is_first_turn(k):
            pred, _ = clamp_unit(self.base(feature))
            return numeric(pred)
        keys = self._keys(k, conversation)
        return numeric([self._instance(key, False).predict() for key in keys])

    def speak(self, k: int, conversation: Conversation):
        if self.is_first_turn(k):
            pred = self.base(self.feature)
            return numeric(np.clip(pred, 0.0, 1.0)), pred
        pred = np.empty(self.d)
        for j, key in enumerate(self._keys(k, conversation)):
            inst = self._instance(key, True)
            pred[j] = inst.predict()
            self.used.append((inst, j))
        return numeric(pred), pred

    def end_day(self, outcome) -> None:
        y = np.atleast_1d(np.asarray(outcome, dtype=np.float64))
        for inst, j in self.used:
            inst.observe(y[j])
        self.used = []


class ConverseActionAgent(Agent):
    """Action-message agent backed by one unbiased predictor per round.

    Events of the round-``k`` predictor pair the counterpart's latest action
    with this agent's own best response to its prediction. The message is
    the best response to the sampled prediction.
    """

    deterministic = False

    def __init__(self, base: BaseModel, utility: UtilitySpec, rng,
                 outcome_space: str = "simplex", alpha: float = 0.05,
                 record: bool = False):
        super().__init__()
        self.base = base
        self.utility = utility
        self.rng = rng
        self.outcome_space = outcome_space
        self.alpha = alpha
        self.record = record
        self.cells = ActionCells(utility, outcome_space)
        self.instances: dict = {}
        self.used: list = []

    def speak(self, k: int, conversation: Conversation):
        if self.is_first_turn(k):
            pred = self.base(self.feature)
            return ActionMessage(best_response(self.utility, np.clip(pred, 0, 1))), pred
        _, msg = latest_by(conversation, self.counterpart, self.n_agents, k)
        if not isinstance(msg, ActionMessage):
            raise ValueError(f"round {k}: expected an action from the counterpart")
        inst = self.instances.get(k)
        if inst is None:
            inst = UnbiasedPredictor(self.cells, [self.utility.n_actions], self.rng,
                                     alpha=self.alpha, record=self.record)
            self.instances[k] = inst
        pred = inst.predict((msg.action,))
        self.used.append(inst)
        return ActionMessage(best_response(self.utility, pred)), pred

    def end_day(self, outcome) -> None:
        for inst in self.used:
            inst.observe(outcome)
        self.used = []


class ConverseManyAgent(Agent):
    """Agent 1 of an ``n``-party conversation.

    On its turns after the first it predicts with the round's unbiased
    predictor, whose events pair (other agent ``s``, bucket of ``s``'s latest
    message at width ``g``) with the bucket of its own prediction at the
    finer width ``g**2``.
    """

    deterministic = False

    def __init__(self, base: BaseModel, g: float, rng, alpha: float = 0.05,
                 record: bool = False):
        super().__init__()
        self.base = base
        self.g = g
        self.n_buckets = buckets_for_width(g)
        self.n_fine = self.n_buckets * self.n_buckets
        self.rng = rng
        self.alpha = alpha
        self.record = record
        self.cells = IntervalCells(self.n_fine)
        self.instances: dict = {}
        self.used: list = []

    def speak(self, k: int, conversation: Conversation):
        if self.is_first_turn(k):
            pred = self.base(self.feature)
            return numeric(np.clip(pred, 0.0, 1.0)), pred
        context = []
        for s in range(2, self.n_agents + 1):
            _, msg = latest_by(conversation, s, self.n_agents, k)
            if msg is None:
                raise ValueError(f"round {k}: agent {s} has not spoken yet")
            v = np.clip(msg.as_array()[:1], 0.0, 1.0)
            context.append(int(bucket_indices(v, self.n_buckets)[0]))
        inst = self.instances.get(k)
        if inst is None:
            inst = UnbiasedPredictor(self.cells, [self.n_buckets] * (self.n_agents - 1),
                                     self.rng, alpha=self.alpha, record=self.record)
            self.instances[k] = inst
        pred = inst.predict(context)
        self.used.append(inst)
        return numeric(pred), pred

    def end_day(self, outcome) -> None:
        for inst in self.used:
            inst.observe(outcome)
        self.used = []


# -- scripted agents ----------------------------------------------------------

class ConstantAgent(Agent):
    def __init__(self, value, action: int | None = None):
        super().__init__()
        self.value = np.atleast_1d(np.asarray(value, dtype=np.float64))
        self.action = action

    def message_for(self, feature, conversation):
        if self.action is not None:
            return ActionMessage(self.action)
        return numeric(np.clip(self.value, 0, 1))

    def speak(self, k, conversation):
        return self.message_for(self.feature, conversation), self.value.copy()


class AlwaysDisagreeAgent(Agent):
    """Answers at the far end of [0, 1] from the counterpart's latest message."""

    def message_for(self, feature, conversation):
        k = conversation.length + 1
        _, msg = latest_by(conversation, self.counterpart, self.n_agents, k)
        if msg is None:
            return numeric([1.0])
        v = msg.as_array()
        return numeric(np.where(v < 0.5, 1.0, 0.0))

    def speak(self, k, conversation):
        msg = self.message_for(self.feature, conversation)
        return msg, msg.as_array()


class ReplayAgent(Agent):
    """Replays the messages and predictions one agent made in a transcript."""

    def __init__(self, transcript, agent: int):
        super().__init__()
        self.transcript = transcript
        self.agent = agent

    def speak(self, k, conversation):
        conv = self.transcript.days[self.t - 1].conversation
        if k > conv.length:
            raise ValueError(f"day {self.t} has no round {k} to replay")
        return conv.messages[k - 1], np.asarray(conv.predictions[k - 1])

    def message_for(self, feature, conversation):
        return self.transcript.days[self.t - 1].conversation.messages[conversation.length]


# -- Bayesian agents ----------------------------------------------------------

class PriorTable:
    """Finite joint prior over worlds ``(xh, xm, y)`` with probabilities ``p``."""

    TOL = 1e-12

    def __init__(self, worlds: list):
        if not worlds:
            raise ValueError("prior needs at least one world")
        self.worlds = worlds
        self.xh = [str(w["xh"]) for w in worlds]
        self.xm = [str(w["xm"]) for w in worlds]
        self.Y = np.array([np.atleast_1d(np.asarray(w["y"], float)) for w in worlds])
        self.P = np.array([float(w["p"]) for w in worlds])
        if np.any(self.P < 0) or abs(self.P.sum() - 1.0) > self.TOL:
            raise ValueError(f"world probabilities must be non-negative and sum to 1 "
                             f"(sum={self.P.sum()!r})")
        if np.any(self.Y < 0) or np.any(self.Y > 1):
            raise ValueError("outcomes must lie in [0, 1]^d")
        self.d = self.Y.shape[1]
        self.codes = {}
        for side, feats in (("human", self.xh), ("model", self.xm)):
            uniq = sorted(set(feats))
            lookup = {f: i for i, f in enumerate(uniq)}
            self.codes[side] = (lookup, np.array([lookup[f] for f in feats]))

    @classmethod
    def from_dict(cls, raw: dict) -> "PriorTable":
        if set(raw) != {"worlds"}:
            raise ValueError("prior JSON must have exactly the key 'worlds'")
        for w in raw["worlds"]:
            if set(w) != {"xh", "xm", "y", "p"}:
                raise ValueError(f"world entries need xh, xm, y, p; got {sorted(w)}")
        return cls(raw["worlds"])

    @classmethod
    def load(cls, path) -> "PriorTable":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"worlds": [{"xh": w["xh"], "xm": w["xm"], "y": list(map(float, w["y"])),
                            "p": float(w["p"])} for w in self.worlds]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def generate(cls, n_worlds: int, rng, d: int = 1, symbols: int = 4,
                 outcome: str = "binary") -> "PriorTable":
        """Random prior: Dirichlet(1) weights over distinct random worlds."""
        if not 1 <= n_worlds <= 64:
            raise ValueError("between 1 and 64 worlds")
        if not 1 <= symbols <= 8:
            raise ValueError("between 1 and 8 feature symbols")
        seen = set()
        worlds = []
        attempts = 0
        while len(worlds) < n_worlds:
            attempts += 1
            if attempts > 100_000:
                raise ValueError("cannot draw that many distinct worlds")
            xh = f"h{rng.integers(symbols)}"
            xm = f"m{rng.integers(symbols)}"
            if outcome == "onehot":
                y = [0.0] * d
                y[int(rng.integers(d))] = 1.0
            else:
                y = [float(v) for v in rng.integers(0, 2, size=d)]
            key = (xh, xm, tuple(y))
            if key in seen:
                continue
            seen.add(key)
            worlds.append({"xh": xh, "xm": xm, "y": y})
        p = rng.dirichlet(np.ones(n_worlds))
        p[-1] = 1.0 - p[:-1].sum()
        for w, pw in zip(worlds, p):
            w["p"] = float(pw)
        return cls(worlds)

    def sample(self, rng) -> int:
        return int(rng.choice(len(self.worlds), p=self.P / self.P.sum()))

    def feature(self, side: str, w: int) -> str:
        return self.xh[w] if side == "human" else self.xm[w]


def _messages_match(a, b) -> bool:
    if isinstance(a, ActionMessage) or isinstance(b, ActionMessage):
        return isinstance(a, ActionMessage) and isinstance(b, ActionMessage) \
            and a.action == b.action
    return np.max(np.abs(a.as_array() - b.as_array())) <= 1e-12


class BayesStrategy:
    """The message a Bayesian on ``side`` sends given a public world set."""

    def __init__(self, prior: PriorTable, side: str, utility: UtilitySpec | None = None):
        self.prior = prior
        self.side = side
        self.utility = utility
        self.lookup, self.codes = prior.codes[side]

    def posterior(self, code: int, live: np.ndarray) -> np.ndarray | None:
        sel = live & (self.codes == code)
        w = self.prior.P[sel]
        if w.sum() <= 0:
            return None
        return (w[:, None] * self.prior.Y[sel]).sum(axis=0) / w.sum()

    def message(self, code: int, live: np.ndarray, prefix: Conversation):
        post = self.posterior(code, live)
        if post is None:
            return None
        if self.utility is not None:
            return ActionMessage(best_response(self.utility, post))
        return numeric(post)


class AgentHandle:
    """Wraps a deterministic agent's ``message_for`` as a strategy."""

    def __init__(self, agent: Agent, prior: PriorTable, side: str):
        if not agent.deterministic:
            raise ValueError("only deterministic agents can be simulated per world")
        self.agent = agent
        self.lookup, self.codes = prior.codes[side]
        self.names = {v: k for k, v in self.lookup.items()}

    def message(self, code: int, live: np.ndarray, prefix: Conversation):
        return self.agent.message_for(self.names[code], prefix)


class BayesianAgent(Agent):
    """Exact Bayesian conversant over a finite common prior.

    Both parties' strategies are common knowledge, so every message refines
    a public set of worlds: a world survives when the speaker, holding that
    world's feature, would have sent the observed message. The agent's own
    prediction is the posterior mean over surviving worlds that match its
    own feature. State resets at the start of each day.
    """

    def __init__(self, prior: PriorTable, side: str, utility: UtilitySpec | None = None,
                 counterpart_strategy=None):
        super().__init__()
        if side not in ("model", "human"):
            raise ValueError("side must be 'model' or 'human'")
        self.prior = prior
        self.side = side
        self.other_side = "human" if side == "model" else "model"
        self.utility = utility
        self.own = BayesStrategy(prior, side, utility)
        self.other = counterpart_strategy or BayesStrategy(prior, self.other_side, utility)
        self.live = np.ones(len(prior.worlds), dtype=bool)
        self.seen = 0
        self.code = None

    def bind(self, index, n_agents):
        if n_agents != 2:
            raise ValueError("Bayesian agents support two-party conversations")
        expected = 1 if self.side == "model" else 2
        if index != expected:
            raise ValueError(f"a {self.side}-side Bayesian must be agent {expected}")
        return super().bind(index, n_agents)

    def begin_day(self, t, feature):
        super().begin_day(t, feature)
        lookup, _ = self.prior.codes[self.side]
        if str(feature) not in lookup:
            raise ValueError(f"feature {feature!r} has zero prior mass")
        self.code = lookup[str(feature)]
        self.live = np.ones(len(self.prior.worlds), dtype=bool)
        self.seen = 0

    def _absorb(self, conversation: Conversation) -> None:
        while self.seen < conversation.length:
            r = self.seen + 1
            speaker = (r - 1) % 2 + 1
            strat = self.own if speaker == self.index else self.other
            observed = conversation.messages[r - 1]
            prefix = Conversation(conversation.messages[:r - 1],
                                  conversation.predictions[:r - 1])
            keep = np.zeros_like(self.live)
            for code in np.unique(strat.codes[self.live]):
                msg = strat.message(int(code), self.live, prefix)
                if msg is not None and _messages_match(msg, observed):
                    keep |= self.live & (strat.codes == code)
            if not keep.any():
                raise InconsistentMessage(f"round {r}: message {observed} is inconsistent "
                                          f"with every live world")
            self.live = keep
            self.seen = r

    def live_worlds(self) -> np.ndarray:
        return np.flatnonzero(self.live & (self.own.codes == self.code))

    def posterior(self) -> np.ndarray:
        post = self.own.posterior(self.code, self.live)
        if post is None:
            raise InconsistentMessage("no live world matches the agent's own feature")
        return post

    def speak(self, k, conversation):
        self._absorb(conversation)
        post = self.posterior()
        if self.utility is not None:
            return ActionMessage(best_response(self.utility, post)), post
        return numeric(post), post

    def message_for(self, feature, conversation):
        # simulate a copy of this agent holding another feature
        clone = BayesianAgent(self.prior, self.side, self.utility, self.other)
        clone.bind(self.index, self.n_agents)
        clone.begin_day(self.t, feature)
        return clone.speak(conversation.length + 1, conversation)[0]


def g_schedule(spec, T: int) -> float:
    """Bucket width from a config value: a number, or ``"T^-1/3"`` style power."""
    if isinstance(spec, (int, float)):
        g = float(spec)
    elif isinstance(spec, str) and spec.replace(" ", "").startswith("T^"):
        g = T ** float(eval_fraction(spec.replace(" ", "")[2:]))
    else:
        raise ValueError(f"cannot read bucket width {spec!r}")
    if not 0 < g <= 1:
        raise ValueError(f"bucket width {g} outside (0, 1]")
    return g


def eval_fraction(text: str) -> float:
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


AGENT_KINDS = ("converse", "converse-action", "converse-many", "bayes", "constant",
               "always-disagree")


def build_agent(spec: dict, *, setting: str, d: int, T: int, rng, utility=None,
                prior: PriorTable | None = None, side: str = "model") -> Agent:
    """Construct an agent from its config entry."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in AGENT_KINDS:
        raise ValueError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")

    def take(allowed):
        extra = set(spec) - set(allowed)
        if extra:
            raise ValueError(f"unknown fields for {kind} agent: {sorted(extra)}")

    if kind == "converse":
        take({"base", "g", "predictor"})
        base = BaseModel.from_dict(spec.get("base", {}), d)
        g = g_schedule(spec.get("g", "T^-1/3"), T)
        return ConverseAgent(base, g, spec.get("predictor", "aost"), horizon=T, d=d)
    if kind == "converse-action":
        take({"base", "outcome_space", "alpha"})
        if utility is None:
            raise ValueError("converse-action agents need a utility")
        return ConverseActionAgent(BaseModel.from_dict(spec.get("base", {}), d), utility, rng,
                                   spec.get("outcome_space", "simplex"),
                                   float(spec.get("alpha", 0.05)))
    if kind == "converse-many":
        take({"base", "g", "alpha"})
        if d != 1:
            raise ValueError("converse-many agents need d = 1")
        return ConverseManyAgent(BaseModel.from_dict(spec.get("base", {}), d),
                                 g_schedule(spec.get("g", "T^-1/3"), T), rng,
                                 float(spec.get("alpha", 0.05)))
    if kind == "bayes":
        take(set())
        if prior is None:
            raise ValueError("bayes agents need outcome_source kind 'prior'")
        return BayesianAgent(prior, side, utility if setting == "action" else None)
    if kind == "constant":
        take({"value", "action"})
        return ConstantAgent(spec.get("value", [0.5] * d), spec.get("action"))
    take(set())
    return AlwaysDisagreeAgent()


__all__ = [
    "Agent", "AlwaysDisagreeAgent", "AgentHandle", "BaseModel", "BayesStrategy",
    "BayesianAgent", "ConstantAgent", "ConverseActionAgent", "ConverseAgent",
    "ConverseManyAgent", "InconsistentMessage", "PriorTable", "ReplayAgent",
    "build_agent", "g_schedule", "latest_by",
]
