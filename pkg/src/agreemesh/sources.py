"""Outcome sources: per-day private features and the revealed outcome.

A source exposes ``features(t)`` (one feature per agent, drawn before the
conversation) and ``outcome(t, conversation)`` (revealed after it).
"""
from __future__ import annotations

import itertools
import os

import numpy as np

from .agents import PriorTable


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class DriftSource:
    """Non-stationary stream where each agent holds its own noisy signal.

    Agent ``a`` sees a signal ``x_a`` uniform on ``{0, ..., symbols-1}`` per
    coordinate. The outcome's logit for coordinate ``j`` is

        drift_j(t) + sum_a weights[a] * (x_{a,j} - c) / c,   c = (symbols-1)/2,

    with ``drift_j(t) = amplitude * sin(2 pi t / period + j)``. Binary mode
    draws each coordinate independently; categorical mode draws a one-hot
    vector from the softmax of the logits. The feature handed to agent ``a``
    is its forecast averaged over the other signals and the drift cycle.
    """

    PHASES = 48

    def __init__(self, rng, n_agents: int, d: int = 1, weights=None, symbols: int = 5,
                 amplitude: float = 0.6, period: float = 4000.0, outcome: str = "binary"):
        if outcome not in ("binary", "categorical"):
            raise ValueError(f"unknown drift outcome {outcome!r}")
        if outcome == "categorical" and d < 2:
            raise ValueError("categorical outcomes need d >= 2")
        self.rng = rng
        self.n = n_agents
        self.d = d
        self.weights = np.asarray(weights if weights is not None else [1.0] * n_agents,
                                  dtype=np.float64)
        if self.weights.size != n_agents:
            raise ValueError("one signal weight per agent")
        self.symbols = int(symbols)
        self.amplitude = float(amplitude)
        self.period = float(period)
        self.kind = outcome
        self._c = max((self.symbols - 1) / 2.0, 0.5)
        self._cache: dict = {}
        self._signals = None
        self._t = 0

    def _drift(self, t) -> np.ndarray:
        return self.amplitude * np.sin(2 * np.pi * t / self.period + np.arange(self.d))

    def _logit(self, drift, signals):
        # signals: (..., n, d)
        scaled = (signals - self._c) / self._c
        return drift + np.tensordot(self.weights, scaled, axes=([0], [-2]))

    def forecast(self, agent: int, own) -> np.ndarray:
        key = (agent, tuple(int(v) for v in own))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        phases = np.arange(self.PHASES) / self.PHASES * self.period
        drifts = np.stack([self._drift(t) for t in phases])
        if self.kind == "binary":
            # coordinates are independent, average each one separately
            out = np.empty(self.d)
            others = [b for b in range(self.n) if b != agent]
            grid = np.array(list(itertools.product(range(self.symbols), repeat=len(others))),
                            dtype=np.float64).reshape(-1, len(others))
            for j in range(self.d):
                z = drifts[:, j][:, None] + self.weights[agent] * (own[j] - self._c) / self._c
                z = z + ((grid - self._c) / self._c) @ self.weights[others]
                out[j] = _sigmoid(z).mean()
        else:
            others = [b for b in range(self.n) if b != agent]
            combos = np.array(list(itertools.product(range(self.symbols),
                                                     repeat=len(others) * self.d)),
                              dtype=np.float64).reshape(-1, len(others), self.d)
            own_part = self.weights[agent] * (np.asarray(own, float) - self._c) / self._c
            other_part = np.tensordot(self.weights[others], (combos - self._c) / self._c,
                                      axes=([0], [1]))
            z = drifts[:, None, :] + own_part + other_part[None, :, :]
            out = _softmax(z).mean(axis=(0, 1))
        self._cache[key] = out
        return out

    def features(self, t: int) -> list:
        self._t = t
        self._signals = self.rng.integers(0, self.symbols, size=(self.n, self.d))
        return [self.forecast(a, self._signals[a]) for a in range(self.n)]

    def probability(self, t: int, signals) -> np.ndarray:
        z = self._logit(self._drift(t), np.asarray(signals, dtype=np.float64))
        return _sigmoid(z) if self.kind == "binary" else _softmax(z)

    def outcome(self, t: int, conversation) -> np.ndarray:
        prob = self.probability(t, self._signals)
        if self.kind == "binary":
            return (self.rng.random(self.d) < prob).astype(np.float64)
        y = np.zeros(self.d)
        y[int(self.rng.choice(self.d, p=prob))] = 1.0
        return y


class PriorSource:
    """I.i.d. days drawn from a finite prior; agent 1 sees ``xm``, agent 2 ``xh``."""

    def __init__(self, rng, prior: PriorTable):
        self.rng = rng
        self.prior = prior
        self.world = None

    def features(self, t):
        self.world = self.prior.sample(self.rng)
        return [self.prior.xm[self.world], self.prior.xh[self.world]]

    def outcome(self, t, conversation):
        return self.prior.Y[self.world].copy()


class FixedSource:
    """Replays listed outcomes (and optional features), cycling if needed."""

    def __init__(self, outcomes, features=None, n_agents: int = 2):
        self.outcomes = [np.atleast_1d(np.asarray(y, float)) for y in outcomes]
        if not self.outcomes:
            raise ValueError("fixed source needs at least one outcome")
        self.feats = features
        self.n = n_agents

    def features(self, t):
        if self.feats is None:
            return [None] * self.n
        return list(self.feats[(t - 1) % len(self.feats)])

    def outcome(self, t, conversation):
        return self.outcomes[(t - 1) % len(self.outcomes)].copy()


class BernoulliSource:
    """I.i.d. binary coordinates with fixed means; features are those means."""

    def __init__(self, rng, mean, n_agents: int = 2):
        self.rng = rng
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.n = n_agents

    def features(self, t):
        return [self.mean.copy() for _ in range(self.n)]

    def outcome(self, t, conversation):
        return (self.rng.random(self.mean.size) < self.mean).astype(np.float64)


class AdversarialSource:
    """Binary outcome set against the final message of the day."""

    def __init__(self, n_agents: int = 2):
        self.n = n_agents

    def features(self, t):
        return [np.array([0.5]) for _ in range(self.n)]

    def outcome(self, t, conversation):
        last = conversation.messages[-1].value[0]
        return np.array([1.0 if last < 0.5 else 0.0])


SOURCE_FIELDS = {
    "drift": {"kind", "weights", "symbols", "amplitude", "period", "outcome"},
    "prior": {"kind", "path", "prior"},
    "fixed": {"kind", "outcomes", "features"},
    "bernoulli": {"kind", "mean"},
    "adversarial": {"kind"},
}


def make_source(spec: dict, *, n_agents: int, d: int, rng, base_dir=None):
    kind = spec.get("kind")
    if kind not in SOURCE_FIELDS:
        raise ValueError(f"unknown outcome source {kind!r}; expected one of "
                         f"{sorted(SOURCE_FIELDS)}")
    extra = set(spec) - SOURCE_FIELDS[kind]
    if extra:
        raise ValueError(f"unknown fields for {kind} source: {sorted(extra)}")
    if kind == "drift":
        return DriftSource(rng, n_agents, d, spec.get("weights"), spec.get("symbols", 5),
                           spec.get("amplitude", 0.6), spec.get("period", 4000.0),
                           spec.get("outcome", "binary"))
    if kind == "prior":
        if "prior" in spec:
            prior = PriorTable.from_dict(spec["prior"])
        elif "path" in spec:
            path = spec["path"]
            if base_dir and not os.path.isabs(path):
                path = os.path.join(base_dir, path)
            prior = PriorTable.load(path)
        else:
            raise ValueError("prior source needs 'prior' or 'path'")
        if prior.d != d:
            raise ValueError(f"prior outcomes have d={prior.d}, config says d={d}")
        return PriorSource(rng, prior)
    if kind == "fixed":
        return FixedSource(spec["outcomes"], spec.get("features"), n_agents)
    if kind == "bernoulli":
        return BernoulliSource(rng, spec.get("mean", [0.5] * d), n_agents)
    if d != 1:
        raise ValueError("adversarial source is scalar")
    return AdversarialSource(n_agents)


__all__ = ["AdversarialSource", "BernoulliSource", "DriftSource", "FixedSource",
           "PriorSource", "make_source"]
