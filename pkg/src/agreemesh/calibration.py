"""Calibration metrics and transcript audits.

All metrics are unnormalized sums over days. Predictions and outcomes are
arrays of shape ``(T,)`` for scalar quantities or ``(T, d)`` for vectors.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import _kernels
from .core import (ActionMessage, Transcript, TranscriptError, agent_index,
                   bucket_indices, buckets_for_width, round_mask)

EXACT_CAP = 64
BRUTE_FORCE_CAP = 12
# the block DP visits prod((n_c + 1)(n_c + 2) / 2) state pairs
DP_TRANSITION_CAP = 5_000_000
SNAP_TOL = 1e-12


class OracleCapExceeded(ValueError):
    """The exact oracle refuses inputs above its size cap; use ``caldist_upper``."""


def _pair(pred, out):
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(out, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {y.shape}")
    return p, y


def _scalar_pair(pred, out):
    p, y = _pair(pred, out)
    if p.ndim == 2 and p.shape[1] == 1:
        p, y = p[:, 0], y[:, 0]
    if p.ndim != 1:
        raise ValueError("expected one-dimensional predictions")
    return p, y


def snap_to_grid(values, tol: float = SNAP_TOL) -> np.ndarray:
    """Merge values closer than ``tol`` to a common representative.

    Runs of sorted values whose consecutive gaps are at most ``tol`` are
    replaced by the run's smallest member, so float noise does not split a
    level set.
    """
    v = np.asarray(values, dtype=np.float64)
    flat = v.ravel()
    if flat.size == 0:
        return v.copy()
    order = np.argsort(flat, kind="stable")
    s = flat[order]
    starts = np.concatenate(([True], np.diff(s) > tol))
    reps = s[np.flatnonzero(starts)][np.cumsum(starts) - 1]
    out = np.empty_like(flat)
    out[order] = reps
    return out.reshape(v.shape)


def bias(pred, out) -> np.ndarray:
    """Signed sum of ``pred - out`` over days (per coordinate)."""
    p, y = _pair(pred, out)
    return (p - y).sum(axis=0)


def ece(pred, out) -> float:
    """Expected calibration error with level sets given by exact equality."""
    p, y = _scalar_pair(pred, out)
    if p.size == 0:
        return 0.0
    _, inv = np.unique(p, return_inverse=True)
    return float(np.abs(np.bincount(inv, weights=p - y)).sum())


def bucketed_ece(pred, out, n: int) -> float:
    """ECE after rounding predictions into ``n`` equal-width buckets."""
    if n < 1:
        raise ValueError("bucket count must be positive")
    p, y = _scalar_pair(pred, out)
    if p.size == 0:
        return 0.0
    idx = bucket_indices(p, n)
    return float(np.abs(np.bincount(idx, weights=p - y, minlength=n)).sum())


def caldist_upper(pred, out, n: int) -> float:
    """Bucketed ECE plus ``T / n``, an upper bound on the distance to calibration."""
    p, _ = _scalar_pair(pred, out)
    return bucketed_ece(pred, out, n) + p.size / n


def _outcome_classes(p, y):
    vals, inv = np.unique(y, return_inverse=True)
    order = np.lexsort((p, inv))
    sp = np.ascontiguousarray(p[order])
    counts = np.bincount(inv, minlength=vals.size)
    offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    return sp, offsets, np.ascontiguousarray(vals, dtype=np.float64)


def dp_transitions(offsets) -> int:
    sizes = np.diff(offsets)
    return int(np.prod([(n + 1) * (n + 2) // 2 for n in sizes]))


def caldist_exact(pred, out, cap: int = EXACT_CAP) -> float:
    """Exact l1 distance from ``pred`` to the nearest perfectly calibrated sequence.

    A perfectly calibrated sequence assigns each day to a level set whose
    value equals the mean outcome of that set, so the minimum runs over
    groupings of days. The search exploits that an optimal grouping takes
    a contiguous block (in prediction order) from every outcome class.

    Raises
    ------
    OracleCapExceeded
        If ``T > cap`` or the outcome alphabet makes the search too large.
    """
    p, y = _scalar_pair(pred, out)
    if p.size > cap:
        raise OracleCapExceeded(f"T={p.size} exceeds the exact cap {cap}; use caldist_upper")
    if p.size == 0:
        return 0.0
    if np.any((y < 0) | (y > 1)) or np.any((p < 0) | (p > 1)):
        raise ValueError("predictions and outcomes must lie in [0, 1]")
    sp, offsets, vals = _outcome_classes(p, y)
    if dp_transitions(offsets) > DP_TRANSITION_CAP:
        raise OracleCapExceeded("outcome alphabet too large for the exact search; "
                                "use caldist_upper")
    prefix = np.concatenate(([0.0], np.cumsum(sp)))
    return float(_kernels.caldist_dp(sp, prefix, offsets, vals))


def caldist_bruteforce(pred, out) -> float:
    """Exhaustive minimum over all set partitions of the days (``T <= 12``)."""
    p, y = _scalar_pair(pred, out)
    if p.size > BRUTE_FORCE_CAP:
        raise OracleCapExceeded(f"brute force is limited to T <= {BRUTE_FORCE_CAP}")
    return float(_kernels.caldist_partitions(np.ascontiguousarray(p), np.ascontiguousarray(y)))


def caldist(pred, out, n: int | None = None, cap: int = EXACT_CAP) -> tuple[float, str]:
    """Exact distance when under the cap, otherwise the bucketed upper bound."""
    p, _ = _scalar_pair(pred, out)
    try:
        return caldist_exact(pred, out, cap), "exact"
    except OracleCapExceeded:
        n = n or max(1, math.ceil(math.sqrt(p.size)))
        return caldist_upper(pred, out, n), "upper"


def sqe(pred, out) -> float:
    """Squared error summed over days and coordinates."""
    p, y = _pair(pred, out)
    return float(((p - y) ** 2).sum())


def utility_sum(actions, outcomes, utility) -> float:
    """Total realized utility of action indices against outcome vectors."""
    a = np.asarray(actions, dtype=np.int64)
    M = np.asarray(utility.matrix, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64).reshape(a.size, M.shape[1])
    return float((M[a] * y).sum())


# -- audits -----------------------------------------------------------------

@dataclass(frozen=True)
class EventDescriptor:
    kind: str  # "counterpart-bucket" | "marginal-bucket" | "action-pair"
    round: int
    bucket: int = 0
    coord: int = 0
    counterpart_action: int = -1
    own_action: int = -1

    def label(self) -> str:
        if self.kind == "action-pair":
            return f"a={self.counterpart_action};own={self.own_action}"
        if self.kind == "marginal-bucket":
            return f"coord={self.coord + 1};bucket={self.bucket}"
        return f"bucket={self.bucket}"


@dataclass
class EventRow:
    event: EventDescriptor
    coord: int
    count: int
    bias: float
    ece: float | None = None
    caldist_upper: float | None = None
    caldist_exact: float | None = None


CSV_HEADER = ["round", "event", "coord", "count", "bias", "ece", "caldist_upper",
              "caldist_exact"]


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


@dataclass
class CalibrationReport:
    side: int
    mode: str
    rows: list = field(default_factory=list)
    round_sizes: dict = field(default_factory=dict)

    @property
    def per_event_bias(self) -> dict:
        return {(r.event, r.coord): r.bias for r in self.rows}

    @property
    def sample_counts(self) -> dict:
        return {(r.event, r.coord): r.count for r in self.rows}

    @property
    def ece_by_round(self) -> dict:
        out: dict = {}
        for r in self.rows:
            if r.ece is not None:
                out[r.event.round] = out.get(r.event.round, 0.0) + r.ece
        return out

    @property
    def caldist_upper_by_event(self) -> dict:
        return {(r.event, r.coord): r.caldist_upper for r in self.rows}

    @property
    def caldist_exact_by_event(self) -> dict:
        return {(r.event, r.coord): r.caldist_exact for r in self.rows
                if r.caldist_exact is not None}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.event.round, r.event.label(), r.coord + 1, r.count,
                        _cell(r.bias), _cell(r.ece), _cell(r.caldist_upper),
                        _cell(r.caldist_exact)])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = []
        for r in self.rows:
            rec = {"round": r.event.round, "event": asdict(r.event), "coord": r.coord + 1,
                   "count": r.count, "bias": r.bias, "ece": r.ece,
                   "caldist_upper": r.caldist_upper, "caldist_exact": r.caldist_exact}
            rows.append(rec)
        return json.dumps({"side": self.side, "mode": self.mode,
                           "round_sizes": {str(k): v for k, v in self.round_sizes.items()},
                           "rows": rows}, indent=1)


def _latest_message_before(conv, k, who, n_agents):
    # the counterpart's most recent message strictly before round k
    for r in range(k - 1, 0, -1):
        if (r - 1) % n_agents + 1 == who:
            return conv.messages[r - 1]
    return None


def _default_counterpart(side, n_agents):
    if n_agents == 2:
        return 3 - side
    return 1 if side != 1 else 2


def audit_conversation_calibration(transcript: Transcript, side, g: float,
                                   mode: str = "scalar", counterpart=None,
                                   exact_cap: int = EXACT_CAP,
                                   upper_buckets: int | None = None,
                                   snap: bool = False,
                                   rounds=None) -> CalibrationReport:
    """Per-round calibration of one side conditional on the counterpart's bucket.

    For every round ``k >= 2`` spoken by ``side`` the days in ``T(k)`` are
    split by the bucket (width ``g``) of the counterpart's latest message.
    ``mode="marginal"`` does this per coordinate for vector transcripts.
    """
    if transcript.setting.kind == "action":
        raise TranscriptError("action transcripts carry no numeric messages; "
                              "use audit_decision_calibration")
    if mode not in ("scalar", "marginal"):
        raise ValueError(f"unknown mode {mode!r}")
    n_agents = transcript.setting.n_agents
    d = transcript.setting.d
    if mode == "scalar" and d != 1:
        raise ValueError("scalar mode needs d = 1; use mode='marginal'")
    who = agent_index(side, n_agents)
    other = agent_index(counterpart, n_agents) if counterpart is not None else \
        _default_counterpart(who, n_agents)
    nb = buckets_for_width(g)
    report = CalibrationReport(side=who, mode=mode)
    outcomes = transcript.outcomes()
    candidates = rounds if rounds is not None else transcript.rounds_of(who)
    for k in candidates:
        if k < 2 or transcript.speaker(k) != who:
            continue
        idx = np.flatnonzero(round_mask(transcript, k))
        if idx.size == 0:
            continue
        own = np.empty((idx.size, d))
        cmsg = np.empty((idx.size, d))
        keep = np.ones(idx.size, dtype=bool)
        for row, t in enumerate(idx):
            conv = transcript.days[t].conversation
            own[row] = conv.predictions[k - 1]
            m = _latest_message_before(conv, k, other, n_agents)
            if m is None:
                keep[row] = False
                continue
            cmsg[row] = m.value
        idx, own, cmsg = idx[keep], own[keep], cmsg[keep]
        report.round_sizes[k] = int(idx.size)
        ys = outcomes[idx]
        if snap:
            own = snap_to_grid(own)
        coords = range(d)
        for j in coords:
            key_vals = cmsg[:, 0] if mode == "scalar" else cmsg[:, j]
            buckets = bucket_indices(np.clip(key_vals, 0.0, 1.0), nb) + 1
            for b in np.unique(buckets):
                sel = buckets == b
                p, y = own[sel, j], ys[sel, j]
                tau = int(sel.sum())
                nu = upper_buckets or max(1, math.ceil(math.sqrt(tau)))
                exact = None
                if tau <= exact_cap:
                    try:
                        exact = caldist_exact(p, y, exact_cap)
                    except OracleCapExceeded:
                        exact = None
                kind = "counterpart-bucket" if mode == "scalar" else "marginal-bucket"
                ev = EventDescriptor(kind=kind, round=k, bucket=int(b), coord=j)
                report.rows.append(EventRow(ev, j, tau, float((p - y).sum()), ece(p, y),
                                            caldist_upper(p, y, nu), exact))
    return report


def audit_decision_calibration(transcript: Transcript, side, utility,
                               rounds=None) -> CalibrationReport:
    """Bias of one side's predictions on each (counterpart action, own action) event.

    ``utility`` is accepted for interface symmetry and to validate that the
    transcript's action ids index into it.
    """
    if transcript.setting.kind != "action":
        raise TranscriptError("decision calibration needs an action transcript")
    n_agents = transcript.setting.n_agents
    who = agent_index(side, n_agents)
    other = _default_counterpart(who, n_agents)
    n_actions = len(utility.matrix)
    d = transcript.setting.d
    outcomes = transcript.outcomes()
    report = CalibrationReport(side=who, mode="decision")
    candidates = rounds if rounds is not None else transcript.rounds_of(who)
    for k in candidates:
        if k < 2 or transcript.speaker(k) != who:
            continue
        idx = np.flatnonzero(round_mask(transcript, k))
        if idx.size == 0:
            continue
        report.round_sizes[k] = int(idx.size)
        sums: dict = {}
        counts: dict = {}
        for t in idx:
            conv = transcript.days[t].conversation
            prev = _latest_message_before(conv, k, other, n_agents)
            mine = conv.messages[k - 1]
            if not isinstance(prev, ActionMessage) or not isinstance(mine, ActionMessage):
                raise TranscriptError(f"day {t + 1}: expected action messages")
            if not (0 <= prev.action < n_actions and 0 <= mine.action < n_actions):
                raise TranscriptError(f"day {t + 1}: action id out of range")
            key = (prev.action, mine.action)
            diff = np.asarray(conv.predictions[k - 1]) - outcomes[t]
            sums[key] = sums.get(key, 0.0) + diff
            counts[key] = counts.get(key, 0) + 1
        for key in sorted(sums):
            ev = EventDescriptor(kind="action-pair", round=k, counterpart_action=key[0],
                                 own_action=key[1])
            for j in range(d):
                report.rows.append(EventRow(ev, j, counts[key], float(sums[key][j])))
    return report
